//! Pipeline configuration: one TOML file, command-line flags win.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voxtherm_core::model::{GBParams, MaxFeatures, ModelKind, RFParams};
use voxtherm_core::volume::{DEFAULT_RADIUS, DEFAULT_SIGMA};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CityConfig {
    pub name: String,
    /// Building list JSON, or CityGML (`.gml`/`.xml`).
    pub buildings: PathBuf,
    /// ASCII grid of air temperature, °C.
    pub temperature: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlurConfig {
    pub sigma: f64,
    pub radius: usize,
}

impl Default for BlurConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            radius: DEFAULT_RADIUS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl Default for RfConfig {
    fn default() -> Self {
        let p = RFParams::default();
        Self {
            n_trees: p.n_trees,
            max_depth: p.max_depth,
            min_samples_split: p.min_samples_split,
            min_samples_leaf: p.min_samples_leaf,
            max_features: p.max_features,
            bootstrap: p.bootstrap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        let p = GBParams::default();
        Self {
            n_trees: p.n_trees,
            max_depth: p.max_depth,
            learning_rate: p.learning_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Noisy copies per training row; 0 disables augmentation.
    pub n_samples: usize,
    pub noise_level: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            noise_level: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub fine_res_m: f64,
    pub coarse_res_m: f64,
    pub model: ModelKind,
    pub patch_radius: usize,
    pub blur: BlurConfig,
    pub rf: RfConfig,
    pub gbt: GbtConfig,
    pub augment: AugmentConfig,
    pub cities: Vec<CityConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            fine_res_m: 1.0,
            coarse_res_m: 1000.0,
            model: ModelKind::Rf,
            patch_radius: 1,
            blur: BlurConfig::default(),
            rf: RfConfig::default(),
            gbt: GbtConfig::default(),
            augment: AugmentConfig::default(),
            cities: Vec::new(),
        }
    }
}

/// Command-line values that replace file values when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub fine_res_m: Option<f64>,
    pub coarse_res_m: Option<f64>,
    pub sigma: Option<f64>,
    pub radius: Option<usize>,
    pub model: Option<ModelKind>,
}

impl PipelineConfig {
    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let abs = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base_dir.join(p) };
        cfg.out_dir = abs(&cfg.out_dir);
        for c in &mut cfg.cities {
            c.buildings = abs(&c.buildings);
            c.temperature = abs(&c.temperature);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.fine_res_m {
            self.fine_res_m = v;
        }
        if let Some(v) = o.coarse_res_m {
            self.coarse_res_m = v;
        }
        if let Some(v) = o.sigma {
            self.blur.sigma = v;
        }
        if let Some(v) = o.radius {
            self.blur.radius = v;
        }
        if let Some(v) = o.model {
            self.model = v;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.fine_res_m > 0.0 && self.fine_res_m.is_finite()) {
            return bad(format!("fine_res_m must be positive, got {}", self.fine_res_m));
        }
        if !(self.coarse_res_m > 0.0 && self.coarse_res_m.is_finite()) {
            return bad(format!("coarse_res_m must be positive, got {}", self.coarse_res_m));
        }
        let ratio = self.coarse_res_m / self.fine_res_m;
        if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return bad(format!(
                "coarse_res_m ({}) must be an integer multiple of fine_res_m ({})",
                self.coarse_res_m, self.fine_res_m
            ));
        }
        if !(self.blur.sigma > 0.0 && self.blur.sigma.is_finite()) {
            return bad(format!("blur.sigma must be positive, got {}", self.blur.sigma));
        }
        if !(self.augment.noise_level >= 0.0 && self.augment.noise_level.is_finite()) {
            return bad(format!("augment.noise_level must be >= 0, got {}", self.augment.noise_level));
        }
        if self.cities.is_empty() {
            return bad("no [[cities]] configured".into());
        }
        let mut names: Vec<&str> = Vec::new();
        for c in &self.cities {
            let ok = !c.name.is_empty()
                && c.name
                    .bytes()
                    .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b'.')
                && !c.name.starts_with('.');
            if !ok {
                return bad(format!("city name {:?}: use [A-Za-z0-9._-], not starting with '.'", c.name));
            }
            if names.contains(&c.name.as_str()) {
                return bad(format!("city name {:?} appears twice", c.name));
            }
            names.push(&c.name);
        }
        if !self.cities.iter().any(|c| c.split == Split::Train) {
            return bad("at least one city needs split = \"train\"".into());
        }
        Ok(())
    }

    pub fn rf_params(&self) -> RFParams {
        RFParams {
            n_trees: self.rf.n_trees,
            max_depth: self.rf.max_depth,
            min_samples_split: self.rf.min_samples_split,
            min_samples_leaf: self.rf.min_samples_leaf,
            max_features: self.rf.max_features,
            bootstrap: self.rf.bootstrap,
            seed: self.seed,
        }
    }

    pub fn gb_params(&self) -> GBParams {
        GBParams {
            n_trees: self.gbt.n_trees,
            max_depth: self.gbt.max_depth,
            learning_rate: self.gbt.learning_rate,
            seed: self.seed,
        }
    }

    pub fn city_dir(&self, city: &str) -> PathBuf {
        self.out_dir.join(city)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 7
out_dir = "run"
model = "gbt"

[blur]
sigma = 1.2

[gbt]
n_trees = 50
learning_rate = 0.1

[[cities]]
name = "a"
buildings = "a/buildings.json"
temperature = "/data/a.asc"
split = "train"

[[cities]]
name = "b"
buildings = "b/buildings.gml"
temperature = "b/t.asc"
split = "test"
"#;

    #[test]
    fn parses_and_resolves_paths() {
        let cfg = PipelineConfig::from_toml(SAMPLE, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.out_dir, PathBuf::from("/cfg/run"));
        assert_eq!(cfg.model, ModelKind::Gbt);
        assert_eq!(cfg.blur.sigma, 1.2);
        assert_eq!(cfg.blur.radius, 1);
        assert_eq!(cfg.gbt.n_trees, 50);
        assert_eq!(cfg.gbt.max_depth, 3);
        assert_eq!(cfg.cities[0].buildings, PathBuf::from("/cfg/a/buildings.json"));
        assert_eq!(cfg.cities[0].temperature, PathBuf::from("/data/a.asc"));
        assert_eq!(cfg.cities[1].split, Split::Test);
        cfg.validate().unwrap();
    }

    #[test]
    fn flags_win() {
        let mut cfg = PipelineConfig::from_toml(SAMPLE, Path::new("/cfg")).unwrap();
        cfg.apply(&Overrides {
            seed: Some(1),
            sigma: Some(0.5),
            model: Some(ModelKind::Rf),
            ..Default::default()
        });
        assert_eq!((cfg.seed, cfg.blur.sigma, cfg.model), (1, 0.5, ModelKind::Rf));
    }

    #[test]
    fn rejects_bad_configs() {
        let base = PipelineConfig::from_toml(SAMPLE, Path::new("/cfg")).unwrap();
        let mut c = base.clone();
        c.coarse_res_m = 1000.5;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let mut c = base.clone();
        c.cities[1].name = "a".into();
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.cities.iter_mut().for_each(|c| c.split = Split::Test);
        assert!(c.validate().is_err());
        assert!(PipelineConfig::from_toml("bogus_key = 1", Path::new(".")).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig::from_toml(SAMPLE, Path::new("/cfg")).unwrap();
        let again = PipelineConfig::from_toml(&cfg.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(cfg, again);
    }
}
