//! Versioned binary checkpoints: config snapshot, phase, step, every
//! param as named f64 tensors, and optional optimizer moments. All
//! numbers are little-endian; weights round-trip bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use latentmark_autograd::{AdamW, Arr, ParamStore};
use ndarray::IxDyn;

use crate::config::Config;
use crate::error::Error;

const MAGIC: &[u8; 4] = b"LMWM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Watermark,
}

impl Phase {
    fn code(self) -> u8 {
        match self {
            Phase::Pretrain => 0,
            Phase::Watermark => 1,
        }
    }

    fn from_code(c: u8) -> Result<Phase, Error> {
        match c {
            0 => Ok(Phase::Pretrain),
            1 => Ok(Phase::Watermark),
            _ => Err(Error::Checkpoint(format!("unknown phase code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Watermark => "watermark",
        }
    }
}

pub struct OptimState {
    pub step: u64,
    /// (param name, first moment, second moment), flattened row-major.
    pub entries: Vec<(String, Vec<f64>, Vec<f64>)>,
}

pub struct Checkpoint {
    pub config: Config,
    pub phase: Phase,
    pub step: u64,
    /// Name-ordered snapshot of every param in the store.
    pub params: Vec<(String, Arr)>,
    pub optim: Option<OptimState>,
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> Result<String, Error> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("bad utf8: {e}")))
}

fn write_f64s(w: &mut impl Write, vals: impl Iterator<Item = f64>) -> std::io::Result<()> {
    for v in vals {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(out)
}

impl Checkpoint {
    /// Snapshot the live store (and optionally the optimizer) for saving.
    pub fn capture(
        config: &Config,
        phase: Phase,
        step: u64,
        store: &ParamStore,
        optim: Option<&AdamW>,
    ) -> Checkpoint {
        let params = store.params().iter().map(|p| (p.name().to_string(), p.value())).collect();
        let optim = optim.map(|o| {
            let (ostep, entries) = o.export_state();
            OptimState { step: ostep, entries }
        });
        Checkpoint { config: config.clone(), phase, step, params, optim }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), Error> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u8(self.phase.code())?;
        w.write_u64::<LittleEndian>(self.step)?;
        write_str(w, &self.config.to_toml_string())?;

        w.write_u32::<LittleEndian>(self.params.len() as u32)?;
        for (name, value) in &self.params {
            write_str(w, name)?;
            w.write_u8(value.ndim() as u8)?;
            for &d in value.shape() {
                w.write_u32::<LittleEndian>(d as u32)?;
            }
            write_f64s(w, value.iter().cloned())?;
        }

        match &self.optim {
            None => w.write_u8(0)?,
            Some(st) => {
                w.write_u8(1)?;
                w.write_u64::<LittleEndian>(st.step)?;
                w.write_u32::<LittleEndian>(st.entries.len() as u32)?;
                for (name, m, v) in &st.entries {
                    write_str(w, name)?;
                    w.write_u32::<LittleEndian>(m.len() as u32)?;
                    write_f64s(w, m.iter().cloned())?;
                    write_f64s(w, v.iter().cloned())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Checkpoint, Error> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let phase = Phase::from_code(r.read_u8()?)?;
        let step = r.read_u64::<LittleEndian>()?;
        let config = Config::from_toml_str(&read_str(r)?)?;

        let n_params = r.read_u32::<LittleEndian>()? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = read_str(r)?;
            let ndim = r.read_u8()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.read_u32::<LittleEndian>()? as usize);
            }
            let len: usize = dims.iter().product();
            let data = read_f64s(r, len)?;
            let value = Arr::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| Error::Checkpoint(format!("param {name}: {e}")))?;
            params.push((name, value));
        }

        let optim = match r.read_u8()? {
            0 => None,
            1 => {
                let ostep = r.read_u64::<LittleEndian>()?;
                let n = r.read_u32::<LittleEndian>()? as usize;
                let mut entries = Vec::with_capacity(n);
                for _ in 0..n {
                    let name = read_str(r)?;
                    let len = r.read_u32::<LittleEndian>()? as usize;
                    let m = read_f64s(r, len)?;
                    let v = read_f64s(r, len)?;
                    entries.push((name, m, v));
                }
                Some(OptimState { step: ostep, entries })
            }
            c => return Err(Error::Checkpoint(format!("bad optimizer flag {c}"))),
        };

        Ok(Checkpoint { config, phase, step, params, optim })
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, Error> {
        let bytes = std::fs::read(path)?;
        Checkpoint::read_from(&mut bytes.as_slice())
    }

    /// Copy saved weights into a live store built from the same config.
    /// Every checkpoint param must exist with a matching shape.
    pub fn restore_params(&self, store: &ParamStore) -> Result<(), Error> {
        for (name, value) in &self.params {
            let p = store
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("param {name} not in this model")))?;
            if p.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "param {name}: shape {:?} in file, {:?} in model",
                    value.shape(),
                    p.shape()
                )));
            }
            p.set_value(value.clone());
        }
        Ok(())
    }

    /// Restore optimizer moments (no-op when the checkpoint has none).
    pub fn restore_optimizer(&self, opt: &mut AdamW, store: &ParamStore) -> Result<(), Error> {
        if let Some(st) = &self.optim {
            for (name, _, _) in &st.entries {
                if store.get(name).is_none() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer state references unknown param {name}"
                    )));
                }
            }
            opt.import_state(st.step, &st.entries, |name| store.get(name).map(|p| p.shape()));
        }
        Ok(())
    }
}
