use std::path::{Path, PathBuf};

use rebat_core::attack::AttackConfig;
use rebat_core::experiment::ExperimentConfig;
use rebat_core::io::write_atomic;
use rebat_core::train::{config_hash, Checkpoint};
use rebat_core::{Dataset, Error, Model, Result};
use serde_json::Value;

use crate::args::{AttackArgs, Source, Split};

pub type Precision = f32;

/// Write pretty JSON with a `config_hash` field, and echo it to stdout.
pub fn emit_json(path: Option<&Path>, hash: &str, mut value: Value) -> Result<()> {
    if let Value::Object(m) = &mut value {
        m.insert("config_hash".into(), Value::String(hash.into()));
    }
    let text = serde_json::to_string_pretty(&value)?;
    if let Some(p) = path {
        write_atomic(p, format!("{text}\n").as_bytes())?;
    }
    println!("{text}");
    Ok(())
}

/// CSV with a leading `# config_hash:` line.
pub fn write_csv(path: &Path, hash: &str, header: &str, rows: &[String]) -> Result<()> {
    let mut s = format!("# config_hash: {hash}\n{header}\n");
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

pub fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub struct Loaded {
    pub exp: ExperimentConfig,
    pub hash: String,
    pub data: Dataset<Precision>,
}

pub fn load_source(src: &Source) -> Result<Loaded> {
    let exp = ExperimentConfig::load(&src.config)?;
    let (train, val, test) = exp.dataset.load::<Precision>()?;
    let data = match src.split {
        Split::Train => train,
        Split::Test => test,
        Split::Val => val.ok_or_else(|| Error::Config {
            path: "dataset.val_size".into(),
            message: "no validation split configured".into(),
        })?,
    };
    Ok(Loaded {
        hash: config_hash(&exp),
        exp,
        data,
    })
}

pub fn load_model(path: &Path, wa: bool) -> Result<(Model<Precision>, Checkpoint<Precision>)> {
    let ckpt = Checkpoint::<Precision>::load(path)?;
    let model = if wa { ckpt.wa_model()? } else { ckpt.model()? };
    Ok((model, ckpt))
}

/// The config's eval attack with CLI overrides (in units of 1/255).
pub fn attack(base: &AttackConfig, a: &AttackArgs) -> Result<AttackConfig> {
    let mut out = *base;
    if let Some(e) = a.epsilon {
        out.epsilon = e / 255.0;
    }
    if let Some(al) = a.alpha {
        out.alpha = al / 255.0;
    }
    if let Some(k) = a.steps {
        out.steps = k;
    }
    out.validate().map_err(|e| Error::Config {
        path: "attack".into(),
        message: e.to_string(),
    })?;
    Ok(out)
}
