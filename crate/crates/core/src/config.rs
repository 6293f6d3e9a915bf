//! Run configuration covering every tunable, loadable from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pslf::PslfConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SimplifyMode {
    #[default]
    Penalty,
    HardLock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimplifySection {
    pub reduction: f64,
    pub style_penalty: f64,
    pub mode: SimplifyMode,
    /// Report an unreachable hard-lock target instead of failing.
    pub best_effort: bool,
}

impl Default for SimplifySection {
    fn default() -> Self {
        SimplifySection { reduction: 0.7, style_penalty: 100.0, mode: SimplifyMode::Penalty, best_effort: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub views: usize,
    pub image_size: usize,
    pub sharp_angle_deg: f64,
    pub patch_size: usize,
    pub seeds: usize,
    /// Representatives per view kept by k-means pre-selection.
    pub preselect_k: usize,
    /// Total latent factors `K_s + K_c`.
    pub latent_k: usize,
    pub eta: f64,
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub pslf_max_iters: usize,
    pub pslf_tol: f64,
    pub pslf_restarts: usize,
    pub mu: f64,
    pub tau_s: f64,
    pub tau_b: f64,
    pub c_max: usize,
    /// Fixed cluster count; `None` picks it from the eigengap.
    pub clusters: Option<usize>,
    pub max_iterations: usize,
    pub churn_tol: f64,
    /// Seed multiplier for the final backprojection sample.
    pub densify: usize,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub simplify: SimplifySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            views: 12,
            image_size: 200,
            sharp_angle_deg: 40.0,
            patch_size: 48,
            seeds: 30,
            preselect_k: 50,
            latent_k: 50,
            eta: 0.2,
            lambda: 20.0,
            beta: 0.05,
            gamma: 10.0,
            pslf_max_iters: 500,
            pslf_tol: 1e-5,
            pslf_restarts: 3,
            mu: 0.07,
            tau_s: 0.55,
            tau_b: 0.7,
            c_max: 12,
            clusters: None,
            max_iterations: 10,
            churn_tol: 0.05,
            densify: 3,
            seed: 0,
            manifest: None,
            constraints: None,
            truth: None,
            output_dir: None,
            cache_dir: None,
            simplify: SimplifySection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads by extension (`.json`, otherwise TOML); relative paths inside
    /// resolve against the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            RunConfig::from_json(&text)?
        } else {
            RunConfig::from_toml(&text)?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.manifest, &mut cfg.constraints, &mut cfg.truth, &mut cfg.output_dir, &mut cfg.cache_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.views == 0 {
            return fail("views must be at least 1");
        }
        if self.image_size < 16 || self.image_size % 8 != 0 {
            return fail("image_size must be a multiple of 8 and at least 16");
        }
        if self.patch_size == 0 || self.patch_size % 8 != 0 || self.patch_size > self.image_size {
            return fail("patch_size must be a positive multiple of 8 no larger than the image");
        }
        if self.seeds == 0 || self.preselect_k == 0 {
            return fail("seeds and preselect_k must be positive");
        }
        if self.latent_k < 1 {
            return fail("latent_k must be positive");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return fail("eta must lie in (0, 1]");
        }
        if self.lambda < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return fail("lambda, beta and gamma must be non-negative");
        }
        if self.mu < 0.0 || !(0.0..=1.0).contains(&self.tau_s) || !(0.0..=1.0).contains(&self.tau_b) {
            return fail("mu must be non-negative and tau_s, tau_b in [0, 1]");
        }
        if self.c_max < 2 {
            return fail("c_max must be at least 2");
        }
        if self.clusters == Some(0) {
            return fail("clusters must be positive");
        }
        if self.max_iterations == 0 || self.densify == 0 {
            return fail("max_iterations and densify must be positive");
        }
        let s = &self.simplify;
        if !(0.0..1.0).contains(&s.reduction) {
            return fail("simplify.reduction must lie in [0, 1)");
        }
        if s.style_penalty < 1.0 {
            return fail("simplify.style_penalty must be at least 1");
        }
        Ok(())
    }

    /// PSLF settings for a given cap on the latent size.
    pub fn pslf(&self, max_k: usize, seed: u64) -> PslfConfig {
        let mut c = PslfConfig::from_eta(self.latent_k.min(max_k).max(1), self.eta);
        c.lambda = self.lambda;
        c.beta = self.beta;
        c.gamma = self.gamma;
        c.max_iters = self.pslf_max_iters;
        c.tol = self.pslf_tol;
        c.restarts = self.pslf_restarts;
        c.rng_seed = seed;
        c
    }

    /// Hash of the settings that determine rendered views and seeds.
    pub fn render_key(&self) -> String {
        let key = (self.views, self.image_size, self.sharp_angle_deg.to_bits(), self.seeds, self.densify, self.seed);
        digest(&serde_json::to_vec(&key).expect("tuple serializes"))
    }

    /// Hash of the settings that determine patch banks and encodings.
    pub fn prepare_key(&self) -> String {
        let key = (self.render_key(), self.patch_size, self.preselect_k, self.tau_s.to_bits());
        digest(&serde_json::to_vec(&key).expect("tuple serializes"))
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!((c.views, c.image_size, c.patch_size, c.seeds, c.preselect_k), (12, 200, 48, 30, 50));
        assert_eq!((c.eta, c.mu, c.beta, c.lambda, c.gamma), (0.2, 0.07, 0.05, 20.0, 10.0));
    }

    #[test]
    fn toml_and_json_roundtrip() {
        let mut c = RunConfig::default();
        c.eta = 0.5;
        c.clusters = Some(4);
        c.simplify.mode = SimplifyMode::HardLock;
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&json).unwrap(), c);
        let partial = RunConfig::from_toml("eta = 0.8\n[simplify]\nreduction = 0.5\n").unwrap();
        assert_eq!(partial.eta, 0.8);
        assert_eq!(partial.simplify.reduction, 0.5);
        assert_eq!(partial.views, 12);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::from_toml("etaa = 0.2").is_err());
        assert!(RunConfig::from_toml("[simplify]\nfoo = 1").is_err());
        assert!(RunConfig::from_toml("eta = 0.0").is_err());
        assert!(RunConfig::from_toml("patch_size = 50").is_err());
        assert!(RunConfig::from_json(r#"{"views": 0}"#).is_err());
    }

    #[test]
    fn cache_keys_track_relevant_fields() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.eta = 0.9;
        assert_eq!(a.prepare_key(), b.prepare_key());
        b.views = 4;
        assert_ne!(a.render_key(), b.render_key());
        let mut c = a.clone();
        c.patch_size = 32;
        assert_eq!(a.render_key(), c.render_key());
        assert_ne!(a.prepare_key(), c.prepare_key());
    }

    #[test]
    fn relative_paths_resolve_against_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "manifest = \"data/manifest.json\"\n").unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.manifest.unwrap(), dir.path().join("data/manifest.json"));
    }
}
