//! Checkpoint directories: `scene.json` with per-object payloads,
//! `codec.aec`, `config.toml`, `state.json` (step, generator, statistics)
//! and `optimizer.bin` (Adam moments).

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::adam::OptimizerState;
use super::config::TrainConfig;
use super::train::{scene_subprompts, LoopState, Session};
use super::OptimError;
use crate::scene::io::{load_scene, save_scene};
use crate::semantic::{EmbeddingCodec, EmbeddingProvider, SubpromptSet};

impl Session {
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), OptimError> {
        std::fs::create_dir_all(dir)?;
        save_scene(&self.scene, dir)?;
        self.codec.save(&dir.join("codec.aec"))?;
        std::fs::write(dir.join("config.toml"), self.config.to_toml())?;
        std::fs::write(dir.join("state.json"), serde_json::to_string(&self.loop_state())?)?;
        let mut w = BufWriter::new(std::fs::File::create(dir.join("optimizer.bin"))?);
        self.moments.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Restores a session. Subprompt embeddings are recomputed with
    /// `provider`; `overrides` are applied on top of the saved config.
    pub fn load_checkpoint<S: AsRef<str>>(
        dir: &Path,
        provider: &dyn EmbeddingProvider,
        overrides: &[S],
    ) -> Result<Self, OptimError> {
        let config = TrainConfig::load(&dir.join("config.toml"))?.with_overrides(overrides)?;
        let scene = load_scene(&dir.join("scene.json"))?;
        let codec = EmbeddingCodec::load(&dir.join("codec.aec"))?;
        let prompts = SubpromptSet::from_provider(provider, &scene_subprompts(&scene), config.semantic.tau)?;
        let state: LoopState = serde_json::from_str(&std::fs::read_to_string(dir.join("state.json"))?)?;
        let moments = OptimizerState::read_from(&mut BufReader::new(std::fs::File::open(dir.join("optimizer.bin"))?))?;
        let mut session = Session::from_parts(config, scene, codec, prompts, state.rng.clone())?;
        session.restore(state, moments)?;
        Ok(session)
    }
}
