use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use latentctl::diffgen::{DecoderGenerator, Generator, Latent};
use latentctl::evaluation::{
    beta_comparison, estimate_factor, gradient_norm_profile, ks_distance, loss_comparison,
    pixel_trajectory_pca, sweep, write_rows_csv,
};
use latentctl::factor::{fit, ResampleGrid, Resampler};
use latentctl::inversion::{build_dataset, invert, transform_apply, TransformSpec};
use latentctl::numerics::{derive_seed, rng_for, ImageGrid};
use latentctl::parallel::try_map_indexed;
use latentctl::vae::{synth_dataset, train_vae, write_curve_csv, SpriteDataset};

use crate::artifact::{
    load_model, load_network, load_sprites, load_trajectories, read_verified, sha256_hex,
    write_with_manifest, Artifact,
};
use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult, StageExt};

/// What a finished stage reports: its key metric and the files it wrote.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub command: Command,
    pub metric: String,
    pub outputs: Vec<PathBuf>,
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let outs: Vec<String> = self
            .outputs
            .iter()
            .map(|p| p.display().to_string())
            .collect();
        write!(
            f,
            "{}: {} -> {}",
            self.command.name(),
            self.metric,
            outs.join(", ")
        )
    }
}

/// `dir/stem-tag.ext` next to `path`.
pub fn sibling(path: &Path, tag: &str, ext: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}-{tag}.{ext}"))
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    snapshot: String,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl<'a> Ctx<'a> {
    fn input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let bytes = read_verified(path)?;
        self.inputs.insert(role.into(), sha256_hex(&bytes));
        Ok(())
    }

    fn required(&self, what: &str, p: &Option<PathBuf>) -> CliResult<PathBuf> {
        p.clone().ok_or_else(|| {
            CliError::Config(format!("{} needs paths.{what}", self.cfg.command.name()))
        })
    }

    fn output(&self) -> CliResult<PathBuf> {
        self.required("output", &self.cfg.paths.output)
    }

    fn write(&mut self, path: &Path, kind: &str, bytes: &[u8]) -> CliResult<()> {
        write_with_manifest(
            path,
            kind,
            bytes,
            self.cfg.command.name(),
            &self.inputs,
            &self.snapshot,
        )?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn write_artifact(&mut self, path: &Path, a: &Artifact) -> CliResult<()> {
        self.write(path, a.kind(), &a.to_bytes())
    }

    fn write_csv(
        &mut self,
        path: &Path,
        stage: &'static str,
        f: impl FnOnce(&mut Vec<u8>) -> latentctl::Result<()>,
    ) -> CliResult<()> {
        let mut buf = Vec::new();
        f(&mut buf).stage(stage)?;
        self.write(path, "CSV", &buf)
    }

    fn write_pgm(&mut self, path: &Path, img: &ImageGrid) -> CliResult<()> {
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).expect("in-memory write");
        self.write(path, "PGM", &buf)
    }

    fn generator(&mut self) -> CliResult<Box<dyn Generator>> {
        match self.cfg.paths.generator.clone() {
            Some(p) => {
                let net = load_network(&p)?;
                self.input("generator", &p)?;
                Ok(Box::new(DecoderGenerator::square(net).stage("load")?))
            }
            None => Ok(Box::new(self.cfg.sprite.build().stage("load")?)),
        }
    }

    fn dataset(&mut self) -> CliResult<SpriteDataset> {
        match self.cfg.paths.data.clone() {
            Some(p) => {
                let d = load_sprites(&p)?;
                self.input("data", &p)?;
                Ok(d)
            }
            None => synth_dataset(&self.cfg.data).stage("synth-data"),
        }
    }
}

/// Executes the configured stage and writes its outputs with manifests.
pub fn run(cfg: &RunConfig) -> CliResult<Summary> {
    let mut ctx = Ctx {
        cfg,
        snapshot: cfg.to_text(),
        inputs: BTreeMap::new(),
        outputs: Vec::new(),
    };
    let metric = match cfg.command {
        Command::SynthData => synth_data(&mut ctx)?,
        Command::TrainVae => train(&mut ctx)?,
        Command::GenTrajectories => trajectories(&mut ctx)?,
        Command::FitDirection => fit_direction(&mut ctx)?,
        Command::Sweep => run_sweep(&mut ctx)?,
        Command::Resample => resample(&mut ctx)?,
        Command::InvertOne => invert_one(&mut ctx)?,
        Command::AnalyzeCurvature => curvature(&mut ctx)?,
        Command::CompareLosses => compare(&mut ctx)?,
        Command::BetaStudy => beta_study(&mut ctx)?,
    };
    Ok(Summary {
        command: cfg.command,
        metric,
        outputs: ctx.outputs,
    })
}

fn synth_data(ctx: &mut Ctx) -> CliResult<String> {
    let out = ctx.output()?;
    let data = synth_dataset(&ctx.cfg.data).stage("synth-data")?;
    ctx.write_artifact(&out, &Artifact::Sprites(data.clone()))?;
    let (h, w) = data.image_size();
    Ok(format!("{} images of {h}x{w}", data.len()))
}

fn train(ctx: &mut Ctx) -> CliResult<String> {
    let out = ctx.output()?;
    let data = ctx.dataset()?;
    let trained = train_vae(&ctx.cfg.vae, &data).stage("train-vae")?;
    ctx.write_artifact(&out, &Artifact::Network(trained.decoder.net().clone()))?;
    ctx.write_artifact(
        &sibling(&out, "encoder", "dgn1"),
        &Artifact::Network(trained.encoder),
    )?;
    ctx.write_csv(&sibling(&out, "curve", "csv"), "train-vae", |b| {
        write_curve_csv(&trained.curve, b)
    })?;
    let last = trained.curve.last().map_or(f64::NAN, |r| r.loss);
    Ok(format!("final loss {last:.4}"))
}

fn trajectories(ctx: &mut Ctx) -> CliResult<String> {
    let out = ctx.output()?;
    let g = ctx.generator()?;
    let cfg = ctx.cfg;
    let ds = build_dataset(
        &g,
        cfg.kind,
        &cfg.trajectory,
        &cfg.loss,
        &cfg.inversion,
        cfg.trajectory_seed(),
    )
    .stage("gen-trajectories")?;
    let n = ds.records.len();
    ctx.write_artifact(&out, &Artifact::Trajectories(ds.clone()))?;
    ctx.write_csv(&sibling(&out, "records", "csv"), "gen-trajectories", |b| {
        ds.write_csv(b)
    })?;
    Ok(format!("{n} records"))
}

fn fit_direction(ctx: &mut Ctx) -> CliResult<String> {
    let out = ctx.output()?;
    let src = ctx.required("trajectories", &ctx.cfg.paths.trajectories)?;
    let ds = load_trajectories(&src)?;
    ctx.input("trajectories", &src)?;
    let (model, report) = fit(&ds, &ctx.cfg.fit).stage("fit-direction")?;
    ctx.write_artifact(&out, &Artifact::Model(model.clone()))?;
    let range = ctx.cfg.fit.knot_range;
    ctx.write_csv(&sibling(&out, "g", "csv"), "fit-direction", |b| {
        model.write_samples_csv(-range, range, 121, b)
    })?;
    Ok(format!(
        "fit mse {:.3e} (from {:.3e})",
        report.final_mse, report.initial_mse
    ))
}

fn run_sweep(ctx: &mut Ctx) -> CliResult<String> {
    let out = ctx.output()?;
    let g = ctx.generator()?;
    let mpath = ctx.required("model", &ctx.cfg.paths.model)?;
    let model = load_model(&mpath)?;
    ctx.input("model", &mpath)?;
    let mut res = sweep(&g, &model, &ctx.cfg.sweep).stage("sweep")?;
    res.generator_id = ctx
        .inputs
        .get("generator")
        .cloned()
        .unwrap_or_else(|| "sprite".into());
    res.model_id = ctx.inputs["model"].clone();
    ctx.write_csv(&out, "sweep", |b| res.write_csv(b))?;
    Ok(format!("central mean std {:.4}", res.central_mean_std()))
}

fn resample(ctx: &mut Ctx) -> CliResult<String> {
    let out = ctx.output()?;
    let g = ctx.generator()?;
    let mpath = ctx.required("model", &ctx.cfg.paths.model)?;
    let model = load_model(&mpath)?;
    ctx.input("model", &mpath)?;
    let block = &ctx.cfg.resample;
    let resampler = Resampler::new(
        &model,
        &block.target.density(&model),
        ResampleGrid::default(),
    )
    .stage("resample")?;
    let d = g.latent_dim();
    let seed = ctx.cfg.extra_seed();
    let rows = try_map_indexed(block.count, |i| {
        let z = Latent::sample_standard(d, &mut rng_for(derive_seed(seed, i as u64)));
        let z2 = resampler.resample(&z)?;
        let before = estimate_factor(&g.forward(&z)?, block.estimator);
        let after = estimate_factor(&g.forward(&z2)?, block.estimator);
        Ok::<_, latentctl::Error>((
            model.coordinate(z.as_slice())?,
            model.coordinate(z2.as_slice())?,
            before,
            after,
        ))
    })
    .stage("resample")?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    ctx.write_csv(&out, "resample", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["s", "s_resampled", "factor", "factor_resampled"])?;
        for (s, s2, f, f2) in &rows {
            w.write_record([s.to_string(), s2.to_string(), fmt(*f), fmt(*f2)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let measured: Vec<f64> = rows.iter().filter_map(|r| r.3).collect();
    Ok(match block.target.cdf() {
        Some(cdf) => format!(
            "KS distance {:.4} over {} defined estimates",
            ks_distance(&measured, cdf),
            measured.len()
        ),
        None => format!("{} defined estimates", measured.len()),
    })
}

fn invert_one(ctx: &mut Ctx) -> CliResult<String> {
    let out = ctx.output()?;
    let g = ctx.generator()?;
    let cfg = ctx.cfg;
    let d = g.latent_dim();
    let z_star = Latent::sample_standard(d, &mut rng_for(cfg.extra_seed()));
    let source = g.forward(&z_star).stage("invert-one")?;
    let spec = TransformSpec::new(cfg.kind, cfg.invert.t).stage("invert-one")?;
    let target = transform_apply(&source, spec);
    let res = invert(&g, &target, &cfg.loss, &cfg.inversion, &z_star).stage("invert-one")?;
    let recon = g.forward(&res.z).stage("invert-one")?;
    ctx.write_pgm(&out, &recon)?;
    ctx.write_pgm(&sibling(&out, "target", "pgm"), target.image())?;
    ctx.write_csv(&sibling(&out, "curve", "csv"), "invert-one", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["iteration", "loss"])?;
        for (i, l) in res.curve.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(format!(
        "loss {:.3e} after {} iterations",
        res.loss, res.iterations
    ))
}

fn curvature(ctx: &mut Ctx) -> CliResult<String> {
    let out = ctx.output()?;
    let g = ctx.generator()?;
    let cfg = ctx.cfg;
    let z0 = Latent::sample_standard(g.latent_dim(), &mut rng_for(cfg.extra_seed()));
    let img = g.forward(&z0).stage("analyze-curvature")?;
    let grid = cfg.curvature.grid();
    let rep = pixel_trajectory_pca(&img, cfg.kind, &grid).stage("analyze-curvature")?;
    ctx.write_csv(&out, "analyze-curvature", |b| rep.write_csv(b))?;
    if cfg.curvature.gradient_profile {
        let prof = gradient_norm_profile(&g, &z0, cfg.kind, &grid, &cfg.loss)
            .stage("analyze-curvature")?;
        ctx.write_csv(
            &sibling(&out, "gradient", "csv"),
            "analyze-curvature",
            |b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["t", "grad_norm"])?;
                for (t, n) in &prof {
                    w.write_record([t.to_string(), n.to_string()])?;
                }
                w.flush()?;
                Ok(())
            },
        )?;
    }
    Ok(format!("curvature {:.4}", rep.curvature))
}

fn compare(ctx: &mut Ctx) -> CliResult<String> {
    let out = ctx.output()?;
    let g = ctx.generator()?;
    let cfg = ctx.cfg;
    let d = g.latent_dim();
    let amp = cfg.compare.texture;
    let mut rng = rng_for(cfg.extra_seed());
    let targets = (0..cfg.compare.targets)
        .map(|_| {
            let img = g.forward(&Latent::sample_standard(d, &mut rng))?;
            let (h, w) = img.shape();
            Ok(ImageGrid::from_fn(h, w, |i, j| {
                let sign = if (i / 2 + j / 2) % 2 == 0 { 1.0 } else { -1.0 };
                (img.get(i, j) + amp * sign).clamp(0.0, 1.0)
            }))
        })
        .collect::<latentctl::Result<Vec<_>>>()
        .stage("compare-losses")?;
    let rows = loss_comparison(
        &g,
        &targets,
        &cfg.compare.sigmas,
        &cfg.inversion,
        &Latent::zeros(d),
    )
    .stage("compare-losses")?;
    ctx.write_csv(&out, "compare-losses", |b| write_rows_csv(&rows, b))?;
    let sharper = rows
        .iter()
        .filter(|r| r.weighted_sharpness >= r.mse_sharpness)
        .count();
    Ok(format!(
        "weighted at least as sharp in {sharper}/{} rows",
        rows.len()
    ))
}

fn beta_study(ctx: &mut Ctx) -> CliResult<String> {
    let out = ctx.output()?;
    let study = ctx.cfg.beta_study();
    let results = beta_comparison(&study).stage("beta-study")?;
    ctx.write_csv(&out, "beta-study", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record([
            "beta",
            "final_vae_loss",
            "fit_initial_mse",
            "fit_final_mse",
            "central_mean_std",
        ])?;
        for r in &results {
            w.write_record([
                r.beta.to_string(),
                r.final_vae_loss.to_string(),
                r.fit.initial_mse.to_string(),
                r.fit.final_mse.to_string(),
                r.central_std.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    for r in &results {
        ctx.write_csv(
            &sibling(&out, &format!("beta{}", r.beta), "csv"),
            "beta-study",
            |b| r.sweep.write_csv(b),
        )?;
    }
    let parts: Vec<String> = results
        .iter()
        .map(|r| format!("beta {} std {:.4}", r.beta, r.central_std))
        .collect();
    Ok(parts.join(", "))
}
