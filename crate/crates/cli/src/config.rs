//! Flat `key = value` run configuration. Precedence: command line, then the
//! config file, then the defaults below. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use manas::data::{Augment, RainConfig};
use manas::{NetworkConfig, SearchConfig, TrainConfig};

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("name", "run", "run directory name under <out>/runs"),
    ("data", "data", "dataset root with gt/, rain/ and manifest.json"),
    ("seed", "0", "seed for weights, sampling, augmentation and data generation"),
    ("T", "2", "number of cells"),
    ("C", "16", "feature channels at every scale (even)"),
    ("M", "4", "searched columns per cell"),
    ("N", "3", "rainy images per ground truth"),
    ("H", "32", "network input height (training patch height)"),
    ("W", "32", "network input width (training patch width)"),
    ("lambda_arch", "0.01", "weight of the architecture entropy regulariser"),
    ("lambda_comp", "0", "weight of the complexity loss; a comma list runs a sweep"),
    ("iterations", "300", "bi-level search iterations J"),
    ("weight_lr_max", "2e-3", "initial SGD step size for supernet weights"),
    ("weight_lr_min", "1e-4", "final SGD step size for supernet weights"),
    ("momentum", "0.9", "SGD momentum"),
    ("weight_decay", "3e-4", "L2 weight decay for network weights (search and training)"),
    ("arch_lr", "3e-4", "Adam step size for architecture logits"),
    ("arch_weight_decay", "1e-3", "L2 weight decay for architecture logits"),
    ("arch_beta1", "0.9", "Adam beta1 for architecture logits"),
    ("arch_beta2", "0.999", "Adam beta2 for architecture logits"),
    ("warmup_fraction", "0.1", "fraction of J with architecture updates disabled"),
    ("pairs_per_batch", "1", "multi-to-one pairs per optimisation step"),
    ("shared_attention_choice", "false", "one attention choice per cell instead of per site"),
    ("internal_loss", "true", "include the internal consistency loss"),
    ("checkpoint_every", "50", "search iterations between state checkpoints (0 = final only)"),
    ("resume", "", "search checkpoint to resume from"),
    ("epochs", "200", "retraining epochs"),
    ("train_lr", "1e-3", "initial Adam step size for retraining (cosine to 0)"),
    ("train_beta1", "0.9", "Adam beta1 for retraining"),
    ("train_beta2", "0.999", "Adam beta2 for retraining"),
    ("genotype", "", "genotype JSON for train (default <run>/genotype.json)"),
    ("init_from", "", "search or weights checkpoint to warm-start retraining from"),
    ("checkpoint", "", "weights checkpoint for infer/eval (default <run>/ckpt/weights.ckpt)"),
    ("patch", "0", "training crop size (0 = full image)"),
    ("flip", "true", "random horizontal flips during training"),
    ("resize_instead_of_crop", "false", "rescale whole images to patch x patch instead of cropping"),
    ("trainA", "4", "gen-data: pairs in trainA"),
    ("trainB", "4", "gen-data: pairs in trainB"),
    ("test", "2", "gen-data: pairs in the test split"),
    ("size", "32", "gen-data: image side length"),
    ("rain_quantiles", "0.992,0.985,0.975", "fraction of noise pixels zeroed (light,medium,heavy)"),
    ("rain_lengths", "7,11,15", "streak lengths in pixels (light,medium,heavy)"),
    ("rain_gains", "0.6,0.8,1.0", "streak intensity gains (light,medium,heavy)"),
    ("rain_angle_min", "60", "minimum streak angle in degrees"),
    ("rain_angle_max", "120", "maximum streak angle in degrees"),
    ("input", "", "infer: comma-separated image files or directories"),
    ("infer_out", "", "infer: output directory (default <run>/infer)"),
    ("eval_split", "test", "eval: test, train or all"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    pub out: PathBuf,
}

fn canonical(key: &str) -> Result<&'static str> {
    let norm = key.trim().replace('-', "_");
    KEYS.iter()
        .map(|k| k.0)
        .find(|k| *k == norm || k.eq_ignore_ascii_case(&norm) && k.len() == 1)
        .ok_or_else(|| anyhow!("unknown configuration key {key:?}"))
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn new(file: Option<&Path>, overrides: &[(String, String)], out: PathBuf) -> Result<Self> {
        let mut values: BTreeMap<String, String> =
            KEYS.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for (k, v) in parse_file(&text).with_context(|| format!("in {}", path.display()))? {
                values.insert(canonical(&k)?.to_owned(), v);
            }
        }
        for (k, v) in overrides {
            values.insert(canonical(k)?.to_owned(), v.clone());
        }
        Ok(RunConfig { values, out })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.values.insert(canonical(key)?.to_owned(), value.to_owned());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| anyhow!("{key} = {raw:?}: {e}"))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| anyhow!("{key}: {s:?}: {e}")))
            .collect()
    }

    fn triple<T: FromStr + Copy>(&self, key: &str) -> Result<[T; 3]>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.list::<T>(key)?;
        v.try_into().map_err(|v: Vec<T>| anyhow!("{key} needs 3 values, got {}", v.len()))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join("runs").join(self.raw("name"))
    }

    /// Every effective key, one `key = value` line each, in key order.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, _, _) in KEYS {
            let _ = writeln!(s, "{k} = {}", self.values[*k]);
        }
        s
    }

    pub fn network(&self) -> Result<NetworkConfig> {
        Ok(NetworkConfig {
            num_cells: self.get("T")?,
            channels: self.get("C")?,
            columns: self.get("M")?,
            multi_to_one: self.get("N")?,
            height: self.get("H")?,
            width: self.get("W")?,
        })
    }

    /// Search settings; `lambda_comp` must be a single value here.
    pub fn search(&self) -> Result<SearchConfig> {
        let lc = self.list::<f64>("lambda_comp")?;
        if lc.len() != 1 {
            bail!("lambda_comp must be a single value here, got {lc:?}");
        }
        let s = SearchConfig {
            lambda_arch: self.get("lambda_arch")?,
            lambda_comp: lc[0],
            iterations: self.get("iterations")?,
            weight_lr_max: self.get("weight_lr_max")?,
            weight_lr_min: self.get("weight_lr_min")?,
            weight_momentum: self.get("momentum")?,
            weight_decay: self.get("weight_decay")?,
            arch_lr: self.get("arch_lr")?,
            arch_weight_decay: self.get("arch_weight_decay")?,
            arch_betas: (self.get("arch_beta1")?, self.get("arch_beta2")?),
            warmup_fraction: self.get("warmup_fraction")?,
            pairs_per_batch: self.get("pairs_per_batch")?,
            shared_attention_choice: self.get("shared_attention_choice")?,
            internal_loss: self.get("internal_loss")?,
            seed: self.get("seed")?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.get("epochs")?,
            lr: self.get("train_lr")?,
            weight_decay: self.get("weight_decay")?,
            betas: (self.get("train_beta1")?, self.get("train_beta2")?),
            internal_loss: self.get("internal_loss")?,
            pairs_per_batch: self.get("pairs_per_batch")?,
            seed: self.get("seed")?,
        })
    }

    pub fn augment(&self) -> Result<Augment> {
        Ok(Augment {
            patch: self.get("patch")?,
            flip: self.get("flip")?,
            resize_instead_of_crop: self.get("resize_instead_of_crop")?,
        })
    }

    pub fn rain(&self) -> Result<RainConfig> {
        let r = RainConfig {
            quantiles: self.triple("rain_quantiles")?,
            lengths: self.triple("rain_lengths")?,
            gains: self.triple("rain_gains")?,
            angle_min: self.get("rain_angle_min")?,
            angle_max: self.get("rain_angle_max")?,
        };
        r.validate()?;
        Ok(r)
    }
}
