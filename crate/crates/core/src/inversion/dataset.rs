use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{project_ball, recursive_trajectory, InversionConfig, LossSpec, TransformKind};
use crate::diffgen::{Generator, Latent};
use crate::error::{Error, Result};
use crate::numerics::rng_for;
use crate::parallel::try_map_indexed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterRule {
    /// Keep records with loss strictly below `theta`.
    Threshold { theta: f64 },
    /// Keep the `round(fraction · n)` records with the lowest loss.
    KeepFraction { fraction: f64 },
}

impl Default for FilterRule {
    fn default() -> Self {
        FilterRule::KeepFraction { fraction: 0.9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    /// Number of trajectories `S`.
    pub trajectories: usize,
    /// Steps per trajectory `N`.
    pub steps: usize,
    /// Largest transform parameter `T`.
    pub max_t: f64,
    pub filter: FilterRule,
    /// Per-step iteration budget; overrides the inversion config when set.
    pub step_budget: Option<usize>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            trajectories: 20,
            steps: 10,
            max_t: 16.0,
            filter: FilterRule::default(),
            step_budget: None,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.trajectories == 0 {
            return bad("need at least one trajectory");
        }
        if self.steps == 0 {
            return bad("need at least one step per trajectory");
        }
        if !self.max_t.is_finite() {
            return bad("max_t must be finite");
        }
        if self.max_t == 0.0 && self.steps > 1 {
            return bad("max_t = 0 allows a single step only");
        }
        match self.filter {
            FilterRule::KeepFraction { fraction } if !(fraction > 0.0 && fraction <= 1.0) => {
                bad("keep fraction must be in (0, 1]")
            }
            FilterRule::Threshold { theta } if theta.is_nan() => bad("threshold must not be NaN"),
            _ => Ok(()),
        }
    }

    /// `δt_n = n·T/N` for `n = 1..=N`.
    pub fn deltas(&self) -> Vec<f64> {
        (1..=self.steps)
            .map(|n| self.max_t * n as f64 / self.steps as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub z0: Latent,
    pub z_dt: Latent,
    pub dt: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub dim: usize,
    pub kind: TransformKind,
    pub records: Vec<TrajectoryRecord>,
    /// Text snapshot of the generating configuration.
    pub config_snapshot: String,
}

/// Everything that determines a dataset, serialised into its snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetProvenance {
    pub kind: TransformKind,
    pub seed: u64,
    pub trajectory: TrajectoryConfig,
    pub loss: LossSpec,
    pub inversion: InversionConfig,
}

/// Keeps the records selected by `rule`, preserving their order.
pub fn filter_records(records: Vec<TrajectoryRecord>, rule: FilterRule) -> Vec<TrajectoryRecord> {
    match rule {
        FilterRule::Threshold { theta } => records.into_iter().filter(|r| r.loss < theta).collect(),
        FilterRule::KeepFraction { fraction } => {
            let keep = ((fraction * records.len() as f64).round() as usize).min(records.len());
            let mut order: Vec<usize> = (0..records.len()).collect();
            order.sort_by(|&a, &b| records[a].loss.total_cmp(&records[b].loss));
            let mut chosen = vec![false; records.len()];
            for &i in &order[..keep] {
                chosen[i] = true;
            }
            records
                .into_iter()
                .zip(chosen)
                .filter_map(|(r, c)| c.then_some(r))
                .collect()
        }
    }
}

/// Draws `S` starting codes, solves one warm-started trajectory per code and
/// filters the pooled records. Trajectory `i` draws `z₀` from seed
/// `seed + i`; `z₀` is projected onto the inversion ball.
pub fn build_dataset<G: Generator + ?Sized>(
    generator: &G,
    kind: TransformKind,
    config: &TrajectoryConfig,
    loss: &LossSpec,
    inversion: &InversionConfig,
    seed: u64,
) -> Result<TrajectoryDataset> {
    config.validate()?;
    inversion.validate()?;
    loss.validate()?;
    let d = generator.latent_dim();
    let mut inv = inversion.clone();
    if let Some(b) = config.step_budget {
        inv.max_iterations = b;
    }
    let radius = inv.radius_for(d);
    let deltas = config.deltas();
    let per_trajectory = try_map_indexed(config.trajectories, |i| {
        let mut rng = rng_for(seed.wrapping_add(i as u64));
        let z0 = project_ball(&Latent::sample_standard(d, &mut rng), radius);
        let steps = recursive_trajectory(generator, &z0, kind, &deltas, loss, &inv)
            .map_err(|e| e.tagged(format!("trajectory {i}")))?;
        Ok::<_, Error>(
            steps
                .into_iter()
                .map(|s| TrajectoryRecord {
                    z0: z0.clone(),
                    z_dt: s.z,
                    dt: s.delta,
                    loss: s.loss,
                })
                .collect::<Vec<_>>(),
        )
    })?;
    let records: Vec<_> = per_trajectory.into_iter().flatten().collect();
    let total = records.len();
    let records = filter_records(records, config.filter);
    if records.len() < 2 {
        return Err(Error::DatasetTooSmall(format!(
            "{} of {total} records survived filtering",
            records.len()
        )));
    }
    let provenance = DatasetProvenance {
        kind,
        seed,
        trajectory: config.clone(),
        loss: *loss,
        inversion: inversion.clone(),
    };
    let config_snapshot =
        toml::to_string(&provenance).map_err(|e| Error::InvariantViolation(e.to_string()))?;
    Ok(TrajectoryDataset {
        dim: d,
        kind,
        records,
        config_snapshot,
    })
}

impl TrajectoryDataset {
    pub fn provenance(&self) -> Result<DatasetProvenance> {
        toml::from_str(&self.config_snapshot).map_err(|e| Error::InvariantViolation(e.to_string()))
    }

    pub fn write_trj1<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(b"TRJ1")?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&[self.kind.code()])?;
        out.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for r in &self.records {
            for v in
                r.z0.iter()
                    .chain(r.z_dt.iter())
                    .chain([r.dt, r.loss].iter())
            {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        let snap = self.config_snapshot.as_bytes();
        out.write_all(&(snap.len() as u32).to_le_bytes())?;
        out.write_all(snap)
    }

    pub fn read_trj1<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut input, &mut magic)?;
        if &magic != b"TRJ1" {
            return Err(Error::BadMagic { expected: "TRJ1" });
        }
        let dim = read_u32(&mut input)? as usize;
        let mut code = [0u8; 1];
        read_exact(&mut input, &mut code)?;
        let kind = TransformKind::from_code(code[0]).ok_or_else(|| {
            Error::InvariantViolation(format!("unknown transform code {}", code[0]))
        })?;
        let count = read_u32(&mut input)? as usize;
        if dim == 0 {
            return Err(Error::InvariantViolation(
                "TRJ1 latent dimension is zero".into(),
            ));
        }
        let mut records = Vec::with_capacity(count.min(1 << 20));
        let mut buf = vec![0u8; 8 * (2 * dim + 2)];
        for _ in 0..count {
            read_exact(&mut input, &mut buf)?;
            let vals: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let latent = |s: &[f64]| {
                Latent::new(s.to_vec())
                    .map_err(|_| Error::InvariantViolation("non-finite latent in TRJ1".into()))
            };
            records.push(TrajectoryRecord {
                z0: latent(&vals[..dim])?,
                z_dt: latent(&vals[dim..2 * dim])?,
                dt: vals[2 * dim],
                loss: vals[2 * dim + 1],
            });
        }
        let len = read_u32(&mut input)? as usize;
        let mut snap = Vec::new();
        input.take(len as u64 + 1).read_to_end(&mut snap)?;
        if snap.len() < len {
            return Err(Error::Truncated("TRJ1"));
        }
        if snap.len() > len {
            return Err(Error::InvariantViolation(
                "trailing bytes after TRJ1 snapshot".into(),
            ));
        }
        let config_snapshot = String::from_utf8(snap)
            .map_err(|_| Error::InvariantViolation("config snapshot is not UTF-8".into()))?;
        Ok(Self {
            dim,
            kind,
            records,
            config_snapshot,
        })
    }

    /// One row per record: `dt, loss, z0_0.., zdt_0..`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["dt".to_string(), "loss".to_string()];
        header.extend((0..self.dim).map(|k| format!("z0_{k}")));
        header.extend((0..self.dim).map(|k| format!("zdt_{k}")));
        wtr.write_record(&header)?;
        for r in &self.records {
            let row: Vec<String> = [r.dt, r.loss]
                .iter()
                .chain(r.z0.iter())
                .chain(r.z_dt.iter())
                .map(|v| v.to_string())
                .collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated("TRJ1"),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffgen::SpriteWorldConfig;
    use crate::numerics::rng_for;

    fn record(loss: f64, rng: &mut impl rand::Rng) -> TrajectoryRecord {
        TrajectoryRecord {
            z0: Latent::sample_standard(3, rng),
            z_dt: Latent::sample_standard(3, rng),
            dt: 1.0,
            loss,
        }
    }

    #[test]
    fn keep_fraction_order_statistics() {
        let mut rng = rng_for(1);
        let losses: Vec<f64> = (0..100).map(|k| ((k * 37) % 100) as f64 / 7.0).collect();
        let records: Vec<_> = losses.iter().map(|&l| record(l, &mut rng)).collect();
        let kept = filter_records(records.clone(), FilterRule::KeepFraction { fraction: 0.9 });
        assert_eq!(kept.len(), 90);
        let max_kept = kept.iter().map(|r| r.loss).fold(f64::MIN, f64::max);
        let min_dropped = records
            .iter()
            .filter(|r| !kept.contains(r))
            .map(|r| r.loss)
            .fold(f64::MAX, f64::min);
        assert!(max_kept <= min_dropped);
        // original order preserved
        let positions: Vec<usize> = kept
            .iter()
            .map(|k| records.iter().position(|r| r == k).unwrap())
            .collect();
        assert!(positions.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn threshold_filter_is_strict() {
        let mut rng = rng_for(2);
        let records = vec![
            record(0.5, &mut rng),
            record(1.0, &mut rng),
            record(2.0, &mut rng),
        ];
        assert_eq!(
            filter_records(records, FilterRule::Threshold { theta: 1.0 }).len(),
            1
        );
    }

    #[test]
    fn deltas_are_evenly_spaced() {
        let cfg = TrajectoryConfig {
            steps: 4,
            max_t: 2.0,
            ..Default::default()
        };
        assert_eq!(cfg.deltas(), vec![0.5, 1.0, 1.5, 2.0]);
        assert!(TrajectoryConfig {
            filter: FilterRule::KeepFraction { fraction: 0.0 },
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    fn world() -> crate::diffgen::SpriteWorld {
        SpriteWorldConfig {
            d: 6,
            height: 24,
            width: 24,
            r_min: 3.0,
            r_max: 6.0,
            tau: 1.0,
            ..Default::default()
        }
        .build()
        .unwrap()
    }

    #[test]
    fn identity_dataset_has_one_record() {
        let g = world();
        let cfg = TrajectoryConfig {
            trajectories: 2,
            steps: 1,
            max_t: 0.0,
            filter: FilterRule::Threshold { theta: 1e-9 },
            step_budget: Some(3),
        };
        let ds = build_dataset(
            &g,
            TransformKind::TranslateX,
            &cfg,
            &LossSpec::default(),
            &InversionConfig::default(),
            7,
        )
        .unwrap();
        assert_eq!(ds.records.len(), 2);
        for r in &ds.records {
            assert_eq!(r.dt, 0.0);
            assert!(r.loss < 1e-12);
        }
        let single = TrajectoryConfig {
            trajectories: 1,
            ..cfg
        };
        assert!(matches!(
            build_dataset(
                &g,
                TransformKind::TranslateX,
                &single,
                &LossSpec::default(),
                &InversionConfig::default(),
                7
            ),
            Err(Error::DatasetTooSmall(_))
        ));
    }

    #[test]
    fn dataset_is_deterministic_and_round_trips() {
        let g = world();
        let cfg = TrajectoryConfig {
            trajectories: 3,
            steps: 3,
            max_t: 3.0,
            step_budget: Some(30),
            ..Default::default()
        };
        let inv = InversionConfig::default();
        let a = build_dataset(
            &g,
            TransformKind::TranslateY,
            &cfg,
            &LossSpec::Mse,
            &inv,
            11,
        )
        .unwrap();
        let b = build_dataset(
            &g,
            TransformKind::TranslateY,
            &cfg,
            &LossSpec::Mse,
            &inv,
            11,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 8);
        assert!(a.records.iter().all(|r| r.dt > 0.0 && r.dt <= 3.0));
        assert_eq!(a.provenance().unwrap().seed, 11);

        let mut buf = Vec::new();
        a.write_trj1(&mut buf).unwrap();
        assert_eq!(TrajectoryDataset::read_trj1(&buf[..]).unwrap(), a);
        assert!(matches!(
            TrajectoryDataset::read_trj1(&buf[..40]),
            Err(Error::Truncated(_))
        ));
        let mut long = buf.clone();
        long.push(b'x');
        assert!(matches!(
            TrajectoryDataset::read_trj1(&long[..]),
            Err(Error::InvariantViolation(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            TrajectoryDataset::read_trj1(&bad[..]),
            Err(Error::BadMagic { .. })
        ));

        let mut csv_out = Vec::new();
        a.write_csv(&mut csv_out).unwrap();
        let text = String::from_utf8(csv_out).unwrap();
        assert!(text.starts_with("dt,loss,z0_0,"));
        assert_eq!(text.lines().count(), 9);
    }
}
