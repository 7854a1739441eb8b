//! Layout planners: canned fixture lookup and a chat-completion client.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use super::dsl::execute_program_with;
use super::plan::{LayoutPlan, PlannedObjectSpec};
use super::region::RegionTree;
use super::LayoutError;

pub const API_KEY_VAR: &str = "PLANNER_API_KEY";
pub const SCENE_TEMPLATE: &str = include_str!("../../templates/scene_decomposition.txt");
pub const OBJECT_TEMPLATE: &str = include_str!("../../templates/object_decomposition.txt");

/// Plans shipped with the library, by name.
pub const BUILTIN_PLANS: &[(&str, &str)] = &[
    ("desk_scene", include_str!("../../fixtures/plans/desk_scene.json")),
    ("two_tone_pair", include_str!("../../fixtures/plans/two_tone_pair.json")),
];

pub trait Planner {
    fn plan(&self, prompt: &str) -> Result<LayoutPlan, LayoutError>;
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.trim().chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Looks a prompt up among fixture plans: by file name (`desk scene` finds
/// `desk_scene.json`) or by an exact `scene_prompt` match. A directory, when
/// given, is searched before the built-in plans.
#[derive(Clone, Debug, Default)]
pub struct CannedPlanner {
    pub dir: Option<PathBuf>,
}

impl CannedPlanner {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    fn candidates(&self) -> Result<Vec<(String, String)>, LayoutError> {
        let mut out = Vec::new();
        if let Some(dir) = &self.dir {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect();
            entries.sort();
            for p in entries {
                let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                out.push((name, std::fs::read_to_string(&p)?));
            }
        }
        out.extend(BUILTIN_PLANS.iter().map(|(n, t)| (n.to_string(), t.to_string())));
        Ok(out)
    }
}

impl Planner for CannedPlanner {
    fn plan(&self, prompt: &str) -> Result<LayoutPlan, LayoutError> {
        let key = slug(prompt);
        let candidates = self.candidates()?;
        if let Some((_, text)) = candidates.iter().find(|(name, _)| slug(name) == key) {
            return LayoutPlan::from_json(text);
        }
        for (_, text) in &candidates {
            #[derive(Deserialize)]
            struct Head {
                scene_prompt: Option<String>,
            }
            if let Ok(Head { scene_prompt: Some(p) }) = serde_json::from_str::<Head>(text) {
                if p.trim() == prompt.trim() {
                    return LayoutPlan::from_json(text);
                }
            }
        }
        let names: Vec<_> = candidates.iter().map(|(n, _)| n.as_str()).collect();
        Err(LayoutError::Plan(format!("no canned plan matches '{prompt}' (available: {})", names.join(", "))))
    }
}

#[derive(Clone, Debug)]
pub struct RemotePlannerConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: String,
    pub timeout: Duration,
    /// Extra attempts after a response fails validation.
    pub max_repairs: usize,
    pub temperature: f64,
    pub scene_template: String,
    pub object_template: String,
}

impl RemotePlannerConfig {
    /// Reads the API key from the environment.
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self, LayoutError> {
        let api_key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.trim().is_empty()).ok_or_else(|| {
            LayoutError::Config(format!("the remote planner needs an API key: set {API_KEY_VAR}"))
        })?;
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            timeout: Duration::from_secs(120),
            max_repairs: 3,
            temperature: 0.0,
            scene_template: SCENE_TEMPLATE.to_string(),
            object_template: OBJECT_TEMPLATE.to_string(),
        })
    }

    pub fn with_templates(mut self, dir: &Path) -> Result<Self, LayoutError> {
        self.scene_template = std::fs::read_to_string(dir.join("scene_decomposition.txt"))?;
        self.object_template = std::fs::read_to_string(dir.join("object_decomposition.txt"))?;
        Ok(self)
    }
}

/// Two-stage planner over an OpenAI-style chat-completion endpoint: one call
/// for the object list and placement program, then one per object for its
/// region tree. Each reply is checked and, when invalid, sent back with the
/// diagnostic for another try.
pub struct RemotePlanner {
    config: RemotePlannerConfig,
    agent: ureq::Agent,
}

#[derive(Debug, Deserialize)]
struct SceneReply {
    objects: Vec<PlannedObjectSpec>,
    program: Vec<String>,
}

impl RemotePlanner {
    pub fn new(config: RemotePlannerConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self { config, agent }
    }

    fn chat(&self, messages: &[serde_json::Value]) -> Result<String, LayoutError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages,
        });
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(&body)
            .map_err(|e| LayoutError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| LayoutError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(LayoutError::Transport(format!("planner endpoint returned {status}: {text}")));
        }
        let v: serde_json::Value = serde_json::from_str(&text)?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| LayoutError::Transport("reply has no choices[0].message.content".into()))
    }

    /// Sends `prompt`, parses the reply with `check`, and repairs on failure.
    fn ask<T>(&self, prompt: String, check: impl Fn(&str) -> Result<T, String>) -> Result<T, LayoutError> {
        let mut messages = vec![serde_json::json!({"role": "user", "content": prompt})];
        let mut last = String::new();
        for _ in 0..=self.config.max_repairs {
            let reply = self.chat(&messages)?;
            match check(&reply) {
                Ok(v) => return Ok(v),
                Err(diag) => {
                    log::warn!("planner reply rejected: {diag}");
                    messages.push(serde_json::json!({"role": "assistant", "content": reply}));
                    messages.push(serde_json::json!({
                        "role": "user",
                        "content": format!("That answer is invalid: {diag}\nReply again with corrected JSON only."),
                    }));
                    last = diag;
                }
            }
        }
        Err(LayoutError::Plan(format!(
            "planner reply still invalid after {} repairs: {last}",
            self.config.max_repairs
        )))
    }
}

/// The JSON object inside a reply, tolerating code fences and chatter.
pub fn extract_json(reply: &str) -> Option<&str> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    (end > start).then(|| &reply[start..=end])
}

fn check_scene(reply: &str) -> Result<SceneReply, String> {
    let json = extract_json(reply).ok_or("no JSON object found")?;
    let parsed: SceneReply = serde_json::from_str(json).map_err(|e| format!("malformed JSON: {e}"))?;
    let plan = LayoutPlan {
        scene_prompt: None,
        objects: parsed.objects.clone(),
        program: parsed.program.clone(),
        region_trees: BTreeMap::new(),
    };
    if plan.objects.is_empty() {
        return Err("no objects listed".into());
    }
    let program = plan.parse_program().map_err(|e| e.to_string())?;
    let placed = execute_program_with(&program, &plan.bindings()).map_err(|e| e.to_string())?;
    for o in &plan.objects {
        if !placed.contains_key(&o.id) {
            return Err(format!("object '{}' is never placed", o.id));
        }
    }
    if let Some(extra) = placed.keys().find(|k| !plan.objects.iter().any(|o| &o.id == *k)) {
        return Err(format!("program places '{extra}', which is not in the object list"));
    }
    Ok(parsed)
}

fn check_tree(reply: &str) -> Result<RegionTree, String> {
    let json = extract_json(reply).ok_or("no JSON object found")?;
    let tree: RegionTree = serde_json::from_str(json).map_err(|e| format!("malformed region tree: {e}"))?;
    tree.validate().map_err(|e| e.to_string())?;
    Ok(tree)
}

impl Planner for RemotePlanner {
    fn plan(&self, prompt: &str) -> Result<LayoutPlan, LayoutError> {
        let scene = self.ask(self.config.scene_template.replace("{prompt}", prompt), check_scene)?;
        let mut region_trees = BTreeMap::new();
        for o in &scene.objects {
            let size = format!("[{}, {}, {}]", o.size_estimate[0], o.size_estimate[1], o.size_estimate[2]);
            let text = self
                .config
                .object_template
                .replace("{object_prompt}", &o.prompt)
                .replace("{scene_prompt}", prompt)
                .replace("{size}", &size);
            region_trees.insert(o.id.clone(), self.ask(text, check_tree)?);
        }
        let plan = LayoutPlan {
            scene_prompt: Some(prompt.to_string()),
            objects: scene.objects,
            program: scene.program,
            region_trees,
        };
        plan.resolve()?;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canned_lookup_by_name_and_prompt() {
        let p = CannedPlanner::default();
        let a = p.plan("desk scene").unwrap();
        let b = p.plan(a.scene_prompt.as_deref().unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(p.plan("a spaceship").is_err());
    }

    #[test]
    fn builtin_plans_resolve() {
        for (name, text) in BUILTIN_PLANS {
            let plan = LayoutPlan::from_json(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            plan.resolve().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn json_extraction() {
        assert_eq!(extract_json("```json\n{\"a\": {}}\n```"), Some("{\"a\": {}}"));
        assert_eq!(extract_json("nothing"), None);
    }

    #[test]
    fn scene_reply_checks() {
        let ok = r#"{"objects":[{"id":"a","prompt":"x","size_estimate":[1,1,1]}],"program":["place(a, 1, (0,0,0), vec(0,0,a_size.z/2))"]}"#;
        assert!(check_scene(ok).is_ok());
        let missing = r#"{"objects":[{"id":"a","prompt":"x","size_estimate":[1,1,1]}],"program":["b = 1"]}"#;
        assert!(check_scene(missing).unwrap_err().contains("never placed"));
    }
}
