use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use manas::checkpoint::{load_network, load_search_state, save_network, save_search_state};
use manas::data::{load_dataset, read_png, synthesize_split, write_dataset, write_png, DatasetSplit};
use manas::metrics::{evaluate, internal_consistency, psnr, ssim};
use manas::search::{resume_search, run_train, SearchState};
use manas::{validate_config, DerainNetwork, Genotype, LossReport, Mode, NetworkConfig, SearchConfig, Tensor};

use crate::config::RunConfig;

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("cannot create {}", p.display()))
}

fn write_file(p: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, contents).with_context(|| format!("cannot write {}", p.display()))
}

/// Create the run directory and echo the effective configuration into it.
fn prepare_run(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    for sub in ["ckpt", "logs", "report"] {
        mkdir(&dir.join(sub))?;
    }
    write_file(&dir.join("config.echo"), cfg.echo())?;
    Ok(dir)
}

fn load_split(cfg: &RunConfig) -> Result<DatasetSplit> {
    let root = PathBuf::from(cfg.raw("data"));
    ensure!(root.join("manifest.json").is_file(), "no dataset at {} (manifest.json missing)", root.display());
    load_dataset(&root).with_context(|| format!("loading dataset {}", root.display()))
}

struct CsvLog(BufWriter<File>);

impl CsvLog {
    fn create(path: &Path, header: &str) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "{header}")?;
        Ok(CsvLog(w))
    }

    fn row(&mut self, line: &str) -> manas::Result<()> {
        writeln!(self.0, "{line}").and_then(|_| self.0.flush()).map_err(|e| manas::Error::Dataset(e.to_string()))
    }
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let (a, b, t): (usize, usize, usize) = (cfg.get("trainA")?, cfg.get("trainB")?, cfg.get("test")?);
    let size: usize = cfg.get("size")?;
    ensure!(a > 0 && b > 0, "trainA and trainB must each hold at least one pair");
    ensure!(size > 0, "size must be positive");
    let split = synthesize_split((a, b, t), size, size, cfg.get("seed")?, &cfg.rain()?)?;
    mkdir(&cfg.out)?;
    write_dataset(&cfg.out, &split)?;
    println!("wrote {} pairs ({a}/{b}/{t}) of {size}x{size} to {}", a + b + t, cfg.out.display());
    Ok(())
}

fn search_one(
    net: NetworkConfig,
    scfg: &SearchConfig,
    split: &DatasetSplit,
    cfg: &RunConfig,
    dir: &Path,
    tag: &str,
) -> Result<Genotype> {
    let state = match cfg.path("resume") {
        Some(p) => {
            let (state, saved) = load_search_state(&p).with_context(|| format!("resuming from {}", p.display()))?;
            ensure!(state.network.config == net, "checkpoint network {:?} differs from configured {net:?}", state.network.config);
            ensure!(&saved == scfg, "checkpoint search settings differ from the configured ones");
            state
        }
        None => SearchState::new(net, scfg, split)?,
    };
    let every: usize = cfg.get("checkpoint_every")?;
    let ckpt = dir.join("ckpt").join(format!("search{tag}.ckpt"));
    let mut log = CsvLog::create(&dir.join("logs").join(format!("search{tag}.csv")), LossReport::CSV_HEADER)?;
    let augment = cfg.augment()?;
    let mut observer = |s: &SearchState, r: &LossReport| -> manas::Result<()> {
        log.row(&r.csv_row(s.iteration - 1))?;
        if every > 0 && s.iteration % every == 0 {
            save_search_state(&ckpt, s, scfg)?;
        }
        Ok(())
    };
    let out = resume_search(state, scfg, split, &augment, &mut observer)?;
    save_search_state(&ckpt, &out.state, scfg)?;
    write_file(&dir.join(format!("genotype{tag}.json")), out.genotype.to_json()? + "\n")?;
    Ok(out.genotype)
}

fn discrete_params(g: &Genotype) -> Result<usize> {
    Ok(DerainNetwork::instantiate(g.config, Mode::Discrete, Some(g), 0)?.param_count())
}

pub fn search(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let net = cfg.network()?;
    validate_config(&net)?;
    let lambdas: Vec<f64> = cfg.list("lambda_comp")?;
    ensure!(!lambdas.is_empty(), "lambda_comp needs at least one value");
    let dir = prepare_run(cfg)?;
    if lambdas.len() == 1 {
        let g = search_one(net, &cfg.search()?, &split, cfg, &dir, "")?;
        println!("genotype written to {} ({} parameters)", dir.join("genotype.json").display(), discrete_params(&g)?);
        return Ok(());
    }
    ensure!(cfg.path("resume").is_none(), "resume is not supported for a lambda_comp sweep");
    let mut table = String::from("lambda_comp,param_count,genotype\n");
    for &lc in &lambdas {
        let mut one = cfg.clone();
        one.set("lambda_comp", &lc.to_string())?;
        let tag = format!("_lc{lc}");
        let g = search_one(net, &one.search()?, &split, cfg, &dir, &tag)?;
        let n = discrete_params(&g)?;
        println!("lambda_comp = {lc}: {n} parameters");
        table.push_str(&format!("{lc},{n},genotype{tag}.json\n"));
    }
    write_file(&dir.join("report").join("sweep.csv"), table)
}

fn warm_start(path: &Path) -> Result<manas::ParamStore> {
    if let Ok((state, _)) = load_search_state(path) {
        return Ok(state.network.params);
    }
    Ok(load_network(path).with_context(|| format!("reading {}", path.display()))?.params)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.run_dir();
    let gpath = cfg.path("genotype").unwrap_or_else(|| dir.join("genotype.json"));
    let text = fs::read_to_string(&gpath).with_context(|| format!("reading genotype {}", gpath.display()))?;
    let genotype = Genotype::from_json(&text)?;
    let net = cfg.network()?;
    if genotype.config != net {
        bail!("genotype was built for {:?} but the configuration describes {net:?}", genotype.config);
    }
    let split = load_split(cfg)?;
    let tcfg = cfg.train()?;
    let init = cfg.path("init_from").map(|p| warm_start(&p)).transpose()?;
    let dir = prepare_run(cfg)?;
    let pairs = split.training();
    let steps_per_epoch = pairs.len().div_ceil(tcfg.pairs_per_batch.max(1)).max(1);
    let mut log = CsvLog::create(&dir.join("logs").join("train.csv"), LossReport::CSV_HEADER)?;
    let mut observer = |step: usize, r: &LossReport| log.row(&r.csv_row(step));
    let out = run_train(&genotype, &tcfg, &pairs, &cfg.augment()?, init.as_ref(), &mut observer)?;
    let mut epochs = String::from("epoch,trainA\n");
    for (e, m) in out.epoch_means.iter().enumerate() {
        epochs.push_str(&format!("{e},{m}\n"));
    }
    write_file(&dir.join("logs").join("train_epochs.csv"), epochs)?;
    let ckpt = dir.join("ckpt").join("weights.ckpt");
    save_network(&ckpt, &out.network)?;
    println!(
        "trained {} epochs ({} steps per epoch), weights written to {}",
        tcfg.epochs,
        steps_per_epoch,
        ckpt.display()
    );
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.path("checkpoint").unwrap_or_else(|| cfg.run_dir().join("ckpt").join("weights.ckpt"))
}

fn load_weights(cfg: &RunConfig) -> Result<DerainNetwork> {
    let p = checkpoint_path(cfg);
    let net = load_network(&p).with_context(|| format!("loading weights {}", p.display()))?;
    ensure!(net.mode == Mode::Discrete, "{} holds a supernet, not a trained network", p.display());
    Ok(net)
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Mirror-pad the bottom and right edges up to multiples of `d`.
pub fn reflect_pad(img: &Tensor, d: usize) -> Tensor {
    let (c, h, w) = img.chw();
    let (ph, pw) = (h.div_ceil(d) * d, w.div_ceil(d) * d);
    let mut out = Tensor::zeros(&[c, ph, pw]);
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                out.set(ch, y, x, img.at(ch, reflect(y, h), reflect(x, w)));
            }
        }
    }
    out
}

fn crop_to(img: &Tensor, h: usize, w: usize) -> Tensor {
    let (c, _, _) = img.chw();
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        img.at(ch, p / w, p % w)
    })
}

fn expand_inputs(list: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for item in list {
        let p = PathBuf::from(item);
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(&p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

pub fn infer(cfg: &RunConfig) -> Result<()> {
    let inputs = expand_inputs(&cfg.list::<String>("input")?)?;
    ensure!(!inputs.is_empty(), "no input images given");
    let net = load_weights(cfg)?;
    let out_dir = cfg.path("infer_out").unwrap_or_else(|| cfg.run_dir().join("infer"));
    mkdir(&out_dir)?;
    let d = net.config.spatial_divisor();
    for p in &inputs {
        let img = read_png(p)?;
        let (_, h, w) = img.chw();
        let y = net.forward_discrete(&reflect_pad(&img, d))?;
        let y = crop_to(&y, h, w).clamp(0.0, 1.0);
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        write_png(out_dir.join(format!("{stem}.png")), &y)?;
    }
    println!("de-rained {} images into {}", inputs.len(), out_dir.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let net = load_weights(cfg)?;
    let split = load_split(cfg)?;
    let pairs = match cfg.raw("eval_split") {
        "test" => split.test.clone(),
        "train" => split.training(),
        "all" => split.training().into_iter().chain(split.test.iter().cloned()).collect(),
        other => bail!("eval_split must be test, train or all, got {other:?}"),
    };
    ensure!(!pairs.is_empty(), "the {} split is empty", cfg.raw("eval_split"));
    let report = evaluate(&net, &pairs)?;
    let mut base = (0.0, 0.0, 0usize);
    for p in &pairs {
        for r in &p.rainy {
            base.0 += psnr(r, &p.gt, 1.0)?;
            base.1 += ssim(r, &p.gt)?;
            base.2 += 1;
        }
    }
    let mut summary = report.summary_json();
    summary["split"] = cfg.raw("eval_split").into();
    summary["internal_consistency"] = internal_consistency(&net, &pairs)?.into();
    summary["rainy_input"] = serde_json::json!({
        "mean_psnr": base.0 / base.2 as f64,
        "mean_ssim": base.1 / base.2 as f64,
    });
    let dir = cfg.run_dir().join("report");
    mkdir(&dir)?;
    write_file(&dir.join("eval.csv"), report.to_csv())?;
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "{} images: PSNR {:.3} dB, SSIM {:.4} (rainy input {:.3} dB); reference full-scale results, not desk-reproducible: {:.2} dB / {:.3}",
        report.count,
        report.mean_psnr,
        report.mean_ssim,
        base.0 / base.2 as f64,
        manas::metrics::REFERENCE_DID_MDN.0,
        manas::metrics::REFERENCE_DID_MDN.1
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_pad_mirrors_edges() {
        let img = Tensor::from_fn(&[1, 3, 3], |i| i as f64);
        let p = reflect_pad(&img, 4);
        assert_eq!(p.dims(), &[1, 4, 4]);
        assert_eq!(p.at(0, 3, 0), img.at(0, 1, 0));
        assert_eq!(p.at(0, 0, 3), img.at(0, 0, 1));
        assert_eq!(crop_to(&p, 3, 3), img);
    }
}
