//! Bank directory layout: `residual.bmat`, `expert_{k}_a.bmat`,
//! `expert_{k}_b.bmat` (0-based `k`) and `bank.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExpertBank, ExpertFactors};
use crate::linops::{read_bmat, write_bmat};
use crate::{Error, Result, FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub k: usize,
    pub r: usize,
    pub scale: f64,
    pub routing: Vec<f64>,
    pub format_version: u32,
}

pub fn save_bank(bank: &ExpertBank, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_bmat(dir.join("residual.bmat"), bank.residual())?;
    for (k, e) in bank.experts().iter().enumerate() {
        write_bmat(dir.join(format!("expert_{k}_a.bmat")), &e.a)?;
        write_bmat(dir.join(format!("expert_{k}_b.bmat")), &e.b)?;
    }
    let manifest = BankManifest {
        k: bank.num_experts(),
        r: bank.rank(),
        scale: bank.scale(),
        routing: bank.routing().to_vec(),
        format_version: FORMAT_VERSION,
    };
    fs::write(dir.join("bank.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_bank(dir: impl AsRef<Path>) -> Result<ExpertBank> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("bank.json");
    let manifest: BankManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            path: manifest_path,
            msg: format!("unsupported format_version {}", manifest.format_version),
        });
    }
    let residual = read_bmat(dir.join("residual.bmat"))?;
    let experts = (0..manifest.k)
        .map(|k| {
            Ok(ExpertFactors {
                a: read_bmat(dir.join(format!("expert_{k}_a.bmat")))?,
                b: read_bmat(dir.join(format!("expert_{k}_b.bmat")))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bank = ExpertBank::new(residual, experts, manifest.routing, manifest.scale)?;
    if bank.rank() != manifest.r {
        return Err(Error::Format {
            path: manifest_path,
            msg: format!("manifest says r = {}, factors have r = {}", manifest.r, bank.rank()),
        });
    }
    Ok(bank)
}
