use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use mhssmamba::data::{
    encode_cube, encode_pgm, encode_ppm, extract_patches, extract_patches_at, load_cube, stratified_split, synth_cube,
    DataError, HsiCube, PatchSet, Split, SynthSpec,
};
use mhssmamba::model::{encode_checkpoint, load_checkpoint, model_grad_check, GradCheckConfig, Mhssmamba, ModelParams};
use mhssmamba::profile::{run_sweep, ProfileBase, SweepParam};
use mhssmamba::train::{evaluate, predict_indices, train};
use mhssmamba::ModelF64;

use crate::config::RunConfig;
use crate::error::CliError;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn write_hashed(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    println!("sha256 {}  {}", hex::encode(Sha256::digest(bytes)), path.display());
    Ok(())
}

pub fn synth(spec: &SynthSpec, out: &Path) -> Result<(), CliError> {
    let cube = synth_cube(spec).map_err(|e| match e {
        // Out-of-range flags, such as fewer than two classes.
        DataError::Contract(m) => CliError::Config(m),
        other => other.into(),
    })?;
    write_hashed(out, &encode_cube(&cube))?;
    println!(
        "{}x{}x{} cube, {} classes",
        cube.height(),
        cube.width(),
        cube.bands(),
        cube.num_classes()
    );
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<HsiCube, CliError> {
    match &cfg.data_path {
        Some(path) => Ok(load_cube(path)?),
        None => synth_cube(&cfg.synth).map_err(|e| match e {
            DataError::Contract(m) => CliError::Config(format!("synth.*: {m}")),
            other => other.into(),
        }),
    }
}

struct Prepared {
    cube: HsiCube,
    patches: PatchSet,
    split: Split,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let cube = load_data(cfg)?;
    let patches = extract_patches(&cube, &cfg.patch)?;
    let split = stratified_split(&patches, &cfg.split)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    Ok(Prepared { cube, patches, split })
}

fn check_model(model: &ModelF64, cube: &HsiCube) -> Result<(), CliError> {
    if model.bands != cube.bands() {
        return Err(CliError::Config(format!(
            "checkpoint expects {} bands but data has {}",
            model.bands,
            cube.bands()
        )));
    }
    if model.hp.num_classes != cube.num_classes() {
        return Err(CliError::Config(format!(
            "checkpoint has {} classes but data has {}",
            model.hp.num_classes,
            cube.num_classes()
        )));
    }
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let data = prepare(cfg)?;
    let hp = cfg.hyper_params(data.cube.num_classes());
    let mut model = Mhssmamba::<f64>::new(hp, data.cube.bands(), cfg.model_seed)?;
    println!(
        "training on {} patches ({} val, {} test), {} parameters",
        data.split.train.len(),
        data.split.val.len(),
        data.split.test.len(),
        model.params.numel()
    );
    let log = train(&mut model, &data.patches, &data.split, &cfg.train, |r| {
        let val = r.val_oa.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!("epoch {:>3}  loss {:.6}  val OA {val}", r.epoch, r.train_loss);
    })?;
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    write_hashed(
        &cfg.output_dir.join("train_log.csv"),
        log.to_csv(cfg.log_seconds).as_bytes(),
    )?;
    write_hashed(&cfg.output_dir.join("model.ckpt"), &encode_checkpoint(&model))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, which: SplitName) -> Result<(), CliError> {
    let model: ModelF64 = load_checkpoint(checkpoint)?;
    let data = prepare(cfg)?;
    check_model(&model, &data.cube)?;
    let indices: Vec<usize> = match which {
        SplitName::Train => data.split.train,
        SplitName::Val => data.split.val,
        SplitName::Test => data.split.test,
        SplitName::All => (0..data.patches.len()).collect(),
    };
    let name = format!("{which:?}").to_lowercase();
    if indices.is_empty() {
        return Err(CliError::Data(format!("the {name} split is empty")));
    }
    let metrics = evaluate(&model, &data.patches, &indices)?;
    println!("{} samples, split {name}", indices.len());
    print!("{}", metrics.report());
    Ok(())
}

/// `map.pgm` -> (`map.pgm`, `map.ppm`); any other extension is replaced.
fn map_paths(out: &Path) -> (PathBuf, PathBuf) {
    (out.with_extension("pgm"), out.with_extension("ppm"))
}

pub fn predict(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<(), CliError> {
    let model: ModelF64 = load_checkpoint(checkpoint)?;
    let cube = load_data(cfg)?;
    check_model(&model, &cube)?;
    let (h, w) = (cube.height(), cube.width());
    let coords: Vec<(usize, usize)> = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).collect();
    let patches = extract_patches_at(&cube, &cfg.patch, &coords)?;
    let all: Vec<usize> = (0..patches.len()).collect();
    let labels: Vec<u16> = predict_indices(&model, &patches, &all)?
        .into_iter()
        .map(|k| k as u16 + 1)
        .collect();
    let (pgm, ppm) = map_paths(out);
    write_hashed(&pgm, &encode_pgm(h, w, &labels)?)?;
    write_hashed(&ppm, &encode_ppm(h, w, &labels)?)?;
    println!("{h}x{w} classification map, labels 1..={}", model.hp.num_classes);
    Ok(())
}

pub fn gradcheck(seed: u64, eps: f64, corrupt: bool) -> Result<(), CliError> {
    let cfg = GradCheckConfig {
        seed,
        eps,
        ..GradCheckConfig::default()
    };
    let report = model_grad_check(&cfg, corrupt)?;
    let hp = mhssmamba::model::HyperParams {
        embed_dim: cfg.embed_dim,
        num_heads: cfg.num_heads,
        state_dim: cfg.state_dim,
        num_layers: cfg.num_layers,
        num_classes: cfg.num_classes,
    };
    let names = ModelParams::layout(&hp, cfg.bands).names();
    let (param, elem) = report.worst;
    println!("checked {} gradients (seed {seed}, eps {eps:e})", report.checked);
    println!(
        "worst relative error {:.3e} at {}[{elem}]: analytic {:.6e}, numeric {:.6e}",
        report.max_rel_error,
        names.get(param).map_or("?", String::as_str),
        report.analytic,
        report.numeric
    );
    if report.max_rel_error < GRADCHECK_TOLERANCE {
        println!("PASS (< {GRADCHECK_TOLERANCE:e})");
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "worst relative error {:.3e} is not below {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        )))
    }
}

pub fn profile(param: SweepParam, points: usize) -> Result<(), CliError> {
    let base = ProfileBase {
        points,
        ..ProfileBase::default()
    };
    let sweep = run_sweep(param, &base)?;
    print!("{}", sweep.report());
    Ok(())
}
