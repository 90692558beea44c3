//! Run configuration: one TOML file with sections mapping onto the library
//! config structs, plus path resolution for every pipeline artifact. All
//! fields have defaults so an empty config is a valid fast-preset run, and
//! `print-config` shows the fully resolved defaults.

use anyhow::{bail, Context, Result};
use scorecard::features::Variant;
use scorecard::gbdt::{SplitMode, TrainConfig};
use scorecard::metrics::{BootstrapConfig, CostParameters};
use scorecard::segments::SegmentName;
use scorecard::synth::GeneratorConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for every derived random stream; there is no
    /// wall-clock seeding anywhere.
    pub seed: u64,
    pub out_dir: String,
    pub paths: PathsSection,
    pub window: WindowSection,
    pub features: FeaturesSection,
    pub train: TrainSection,
    pub cost: CostParameters,
    pub bootstrap: BootstrapSection,
    pub segments: SegmentsSection,
    pub variants: VariantsSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: "out".to_string(),
            paths: PathsSection::default(),
            window: WindowSection::default(),
            features: FeaturesSection::default(),
            train: TrainSection::default(),
            cost: CostParameters::default(),
            bootstrap: BootstrapSection::default(),
            segments: SegmentsSection::default(),
            variants: VariantsSection::default(),
            synth: SynthSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Input user records; defaults to <out_dir>/users.csv.
    pub users: Option<String>,
    /// Input events; defaults to <out_dir>/events.jsonl.
    pub events: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSection {
    /// Observation window before the snapshot date, in months.
    pub months: u32,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self { months: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    /// Catalog feature names to keep; empty keeps the whole catalog.
    pub include: Vec<String>,
}

/// Training hyperparameters, sized by default for a single-core desk run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub subsample_rows: f64,
    pub subsample_cols: f64,
    /// Histogram bin budget; 0 switches to exact greedy splits.
    pub max_bins: usize,
    /// 0 disables early stopping.
    pub early_stopping_rounds: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            n_rounds: 50,
            max_depth: 2,
            learning_rate: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 5.0,
            subsample_rows: 0.8,
            subsample_cols: 0.8,
            max_bins: 64,
            early_stopping_rounds: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub iterations: usize,
    pub train_fraction: f64,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self {
            iterations: 50,
            train_fraction: 0.70,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentsSection {
    /// Segmentations compare runs, besides the whole-cohort row.
    pub run: Vec<String>,
    /// Optional explicit cut per segmentation (default: cohort median).
    pub cut: BTreeMap<String, f64>,
}

impl Default for SegmentsSection {
    fn default() -> Self {
        Self {
            run: vec![
                "device_score".to_string(),
                "wealth_score".to_string(),
                "rfm".to_string(),
            ],
            cut: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantsSection {
    /// First entry is the comparison baseline.
    pub run: Vec<String>,
}

impl Default for VariantsSection {
    fn default() -> Self {
        Self {
            run: vec!["bureau_only".to_string(), "bureau_plus_app".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Base preset (country_a, country_b, fast); unset fields below keep
    /// the preset's values.
    pub preset: Option<String>,
    pub n_users: Option<usize>,
    pub base_default_rate: Option<f64>,
    pub bureau_effect: Option<f64>,
    pub app_effect: Option<f64>,
    pub mean_orders: Option<f64>,
    pub credit_line_median: Option<f64>,
    pub credit_line_sigma: Option<f64>,
    pub segment_rate_offsets: BTreeMap<String, f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir().join(name)
    }

    pub fn users_path(&self) -> PathBuf {
        self.paths
            .users
            .as_ref()
            .map(PathBuf::from)
            .unwrap_or_else(|| self.out_path("users.csv"))
    }

    pub fn events_path(&self) -> PathBuf {
        self.paths
            .events
            .as_ref()
            .map(PathBuf::from)
            .unwrap_or_else(|| self.out_path("events.jsonl"))
    }

    pub fn truth_path(&self) -> PathBuf {
        self.out_path("truth.json")
    }

    pub fn features_path(&self) -> PathBuf {
        self.out_path("features.csv")
    }

    pub fn segment_scores_path(&self) -> PathBuf {
        self.out_path("segment_scores.csv")
    }

    pub fn model_path(&self, variant: Variant) -> PathBuf {
        self.out_path(&format!("model_{}.json", variant.as_str()))
    }

    pub fn fit_report_path(&self, variant: Variant) -> PathBuf {
        self.out_path(&format!("fit_report_{}.json", variant.as_str()))
    }

    pub fn scores_path(&self, variant: Variant) -> PathBuf {
        self.out_path(&format!("scores_{}.csv", variant.as_str()))
    }

    pub fn metrics_path(&self, variant: Variant) -> PathBuf {
        self.out_path(&format!("metrics_{}.json", variant.as_str()))
    }

    pub fn attributions_path(&self, variant: Variant) -> PathBuf {
        self.out_path(&format!("attributions_{}.csv", variant.as_str()))
    }

    pub fn shap_summary_path(&self, variant: Variant) -> PathBuf {
        self.out_path(&format!("shap_summary_{}.json", variant.as_str()))
    }

    pub fn beeswarm_path(&self, variant: Variant) -> PathBuf {
        self.out_path(&format!("beeswarm_{}.csv", variant.as_str()))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            n_rounds: t.n_rounds,
            max_depth: t.max_depth,
            learning_rate: t.learning_rate,
            lambda: t.lambda,
            gamma: t.gamma,
            min_child_weight: t.min_child_weight,
            subsample_rows: t.subsample_rows,
            subsample_cols: t.subsample_cols,
            seed: self.seed,
            early_stopping_rounds: (t.early_stopping_rounds > 0)
                .then_some(t.early_stopping_rounds),
            split_mode: if t.max_bins == 0 {
                SplitMode::Exact
            } else {
                SplitMode::Histogram {
                    max_bins: t.max_bins,
                }
            },
        }
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            iterations: self.bootstrap.iterations,
            train_fraction: self.bootstrap.train_fraction,
            seed: self.seed,
            train: self.train_config(),
            cost: self.cost,
        }
    }

    /// Resolve the generator config: preset base, section overrides,
    /// global seed and window.
    pub fn generator_config(&self, preset_flag: Option<&str>) -> Result<GeneratorConfig> {
        let preset = preset_flag.or(self.synth.preset.as_deref());
        let mut g = match preset {
            Some(name) => GeneratorConfig::preset(name)?,
            None => GeneratorConfig::fast(),
        };
        let s = &self.synth;
        if let Some(v) = s.n_users {
            g.n_users = v;
        }
        if let Some(v) = s.base_default_rate {
            g.base_default_rate = v;
        }
        if let Some(v) = s.bureau_effect {
            g.bureau_effect = v;
        }
        if let Some(v) = s.app_effect {
            g.app_effect = v;
        }
        if let Some(v) = s.mean_orders {
            g.mean_orders = v;
        }
        if let Some(v) = s.credit_line_median {
            g.credit_line_median = v;
        }
        if let Some(v) = s.credit_line_sigma {
            g.credit_line_sigma = v;
        }
        g.segment_rate_offsets = s.segment_rate_offsets.clone();
        g.seed = self.seed;
        g.window_months = self.window.months;
        Ok(g)
    }

    pub fn parse_variant(name: &str) -> Result<Variant> {
        match name {
            "bureau_only" => Ok(Variant::BureauOnly),
            "bureau_plus_app" => Ok(Variant::BureauPlusApp),
            other => bail!("unknown variant {other:?} (expected bureau_only or bureau_plus_app)"),
        }
    }

    /// Variants in config order, optionally narrowed by a `--variant`
    /// flag.
    pub fn variants(&self, only: Option<&str>) -> Result<Vec<Variant>> {
        let configured: Vec<Variant> = self
            .variants
            .run
            .iter()
            .map(|s| Self::parse_variant(s))
            .collect::<Result<_>>()?;
        if configured.is_empty() {
            bail!("config lists no variants");
        }
        match only {
            None => Ok(configured),
            Some(name) => {
                let v = Self::parse_variant(name)?;
                if !configured.contains(&v) {
                    bail!("variant {name} is not in the configured variant list");
                }
                Ok(vec![v])
            }
        }
    }

    /// Segmentations to compare, optionally narrowed by `--segments`.
    pub fn segmentations(&self, only: Option<&str>) -> Result<Vec<SegmentName>> {
        let list: Vec<&str> = match only {
            Some(csv) => csv.split(',').map(str::trim).filter(|s| !s.is_empty()).collect(),
            None => self.segments.run.iter().map(String::as_str).collect(),
        };
        let mut names = Vec::new();
        for s in list {
            let name = SegmentName::parse(s)
                .map_err(|e| anyhow::anyhow!("bad segmentation in config: {e}"))?;
            if name == SegmentName::None {
                bail!("\"none\" is always included; list only real segmentations");
            }
            if names.contains(&name) {
                bail!("segmentation {s} listed twice");
            }
            names.push(name);
        }
        Ok(names)
    }

    pub fn segment_cut(&self, name: SegmentName) -> Option<f64> {
        self.segments.cut.get(name.as_str()).copied()
    }
}
