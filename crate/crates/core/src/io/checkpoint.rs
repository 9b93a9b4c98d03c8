use std::fs;
use std::path::Path;

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::nn::{ClassifierNet, GeneratorNet, ParamSet};
use crate::tensor::Tensor;
use crate::trainer::{Models, TrainConfig};

const MANIFEST: &str = "manifest.txt";
const PARAMS: &str = "params.bin";
const OPTIM: &str = "optim.bin";
const CONFIG: &str = "config.txt";

/// Trained models plus everything needed to rebuild them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub fold: usize,
    pub epoch: usize,
    pub models: Models,
    /// Whether Adam moments and step counts are stored alongside.
    pub optimizer_state: bool,
}

/// The four files of a checkpoint directory, in memory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bundle {
    pub manifest: String,
    pub params: Vec<u8>,
    pub optim: Option<Vec<u8>>,
    pub config: String,
}

fn sets(models: &Models) -> Vec<(&'static str, &ParamSet<f32>)> {
    let mut v = Vec::new();
    if let Some(g) = &models.generator {
        v.push(("generator", &g.params));
    }
    v.push(("classifier", &models.classifier.params));
    v
}

impl Checkpoint {
    pub fn to_bundle(&self) -> Bundle {
        let mut manifest = String::new();
        let mut params = Vec::new();
        let mut optim = Vec::new();
        for (prefix, set) in sets(&self.models) {
            for p in set.iter() {
                manifest.push_str(&format!("{prefix}.{}", p.name));
                for d in p.value.shape() {
                    manifest.push_str(&format!(" {d}"));
                }
                manifest.push_str(&format!(" {}\n", params.len()));
                p.value.data().iter().for_each(|v| params.extend_from_slice(&v.to_le_bytes()));
                p.adam_m.iter().chain(&p.adam_v).for_each(|v| optim.extend_from_slice(&v.to_le_bytes()));
                optim.extend_from_slice(&p.step_count.to_le_bytes());
            }
        }
        let mut config = self.config.to_kv();
        config.push_str(&format!("fold={}\nepoch={}\n", self.fold, self.epoch));
        config.push_str(&format!("has_generator={}\n", self.models.generator.is_some()));
        Bundle { manifest, params, optim: self.optimizer_state.then_some(optim), config }
    }

    pub fn from_bundle(bundle: &Bundle, dir: &Path) -> Result<Self> {
        let broken = |file: &str, reason: String| Error::Integrity { path: dir.join(file), reason };
        let (config, mut extra) =
            TrainConfig::from_kv(&bundle.config).map_err(|e| broken(CONFIG, e.to_string()))?;
        let mut field = |k: &str| extra.remove(k).ok_or_else(|| broken(CONFIG, format!("missing key {k:?}")));
        let fold: usize = field("fold")?.parse().map_err(|_| broken(CONFIG, "bad fold".into()))?;
        let epoch: usize = field("epoch")?.parse().map_err(|_| broken(CONFIG, "bad epoch".into()))?;
        let has_generator: bool = field("has_generator")?.parse().map_err(|_| broken(CONFIG, "bad has_generator".into()))?;
        if let Some(k) = extra.keys().next() {
            return Err(broken(CONFIG, format!("unexpected key {k:?}")));
        }

        let arch = |e: Error| broken(CONFIG, e.to_string());
        let mut models = Models {
            generator: if has_generator { Some(GeneratorNet::new(config.generator, 0).map_err(arch)?) } else { None },
            classifier: ClassifierNet::new(config.classifier, 0).map_err(arch)?,
        };

        let entries = parse_manifest(&bundle.manifest).map_err(|r| broken(MANIFEST, r))?;
        let expected: Vec<(String, Vec<usize>)> = sets(&models)
            .into_iter()
            .flat_map(|(prefix, set)| set.iter().map(move |p| (format!("{prefix}.{}", p.name), p.value.shape().to_vec())))
            .collect();
        if entries.len() != expected.len() {
            return Err(broken(MANIFEST, format!("{} entries, architecture has {}", entries.len(), expected.len())));
        }
        let mut offset = 0usize;
        for ((name, dims, off), (ename, edims)) in entries.iter().zip(&expected) {
            if name != ename || dims != edims {
                return Err(broken(MANIFEST, format!("entry {name} {dims:?} does not match {ename} {edims:?}")));
            }
            if *off != offset {
                return Err(broken(MANIFEST, format!("entry {name} at byte {off}, expected {offset}")));
            }
            let len = 4 * dims.iter().product::<usize>();
            if off + len > bundle.params.len() {
                return Err(broken(PARAMS, format!("entry {name} runs past the end of the blob")));
            }
            offset += len;
        }
        if offset != bundle.params.len() {
            return Err(broken(PARAMS, format!("blob has {} bytes, manifest covers {offset}", bundle.params.len())));
        }
        if let Some(optim) = &bundle.optim {
            let need: usize = expected.iter().map(|(_, d)| 8 * d.iter().product::<usize>() + 8).sum();
            if optim.len() != need {
                return Err(broken(OPTIM, format!("optimizer blob has {} bytes, expected {need}", optim.len())));
            }
        }

        let mut p_pos = 0;
        let mut o_pos = 0;
        let f32s = |b: &[u8]| b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect::<Vec<_>>();
        let mut assign = |set: &mut ParamSet<f32>| {
            for p in set.iter_mut() {
                let n = p.value.numel();
                let values = f32s(&bundle.params[p_pos..p_pos + 4 * n]);
                p_pos += 4 * n;
                p.value = Tensor::new(p.value.shape().to_vec(), values).expect("shape checked");
                if let Some(optim) = &bundle.optim {
                    p.adam_m = f32s(&optim[o_pos..o_pos + 4 * n]);
                    p.adam_v = f32s(&optim[o_pos + 4 * n..o_pos + 8 * n]);
                    o_pos += 8 * n;
                    p.step_count = u64::from_le_bytes(optim[o_pos..o_pos + 8].try_into().expect("8 bytes"));
                    o_pos += 8;
                }
            }
        };
        if let Some(g) = models.generator.as_mut() {
            assign(&mut g.params);
        }
        assign(&mut models.classifier.params);
        Ok(Checkpoint { config, fold, epoch, models, optimizer_state: bundle.optim.is_some() })
    }
}

fn parse_manifest(text: &str) -> std::result::Result<Vec<(String, Vec<usize>, usize)>, String> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() < 3 {
                return Err(format!("line {}: expected `name dims... offset`", i + 1));
            }
            let nums = tokens[1..]
                .iter()
                .map(|t| t.parse::<usize>().map_err(|_| format!("line {}: {t:?} is not a number", i + 1)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let (off, dims) = nums.split_last().expect("at least two numbers");
            Ok((tokens[0].to_string(), dims.to_vec(), *off))
        })
        .collect()
}

/// Writes the bundle files into `dir`, creating it if needed.
pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let b = ckpt.to_bundle();
    write_atomic(&dir.join(PARAMS), &b.params)?;
    match &b.optim {
        Some(o) => write_atomic(&dir.join(OPTIM), o)?,
        None => {
            let p = dir.join(OPTIM);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    write_atomic(&dir.join(CONFIG), b.config.as_bytes())?;
    write_atomic(&dir.join(MANIFEST), b.manifest.as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let text = |name: &str| -> Result<String> {
        let p = dir.join(name);
        String::from_utf8(read_file(&p)?).map_err(|_| Error::Integrity { path: p, reason: "not UTF-8".into() })
    };
    let optim_path = dir.join(OPTIM);
    let bundle = Bundle {
        manifest: text(MANIFEST)?,
        params: read_file(&dir.join(PARAMS))?,
        optim: if optim_path.exists() { Some(read_file(&optim_path)?) } else { None },
        config: text(CONFIG)?,
    };
    Checkpoint::from_bundle(&bundle, dir)
}
