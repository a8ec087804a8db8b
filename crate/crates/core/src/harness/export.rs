use std::collections::BTreeMap;
use std::io::Write;

use crate::dataset::DatasetView;
use crate::error::Result;
use crate::tensornet::Tensor;
use crate::vae::{trajectories_tensor, VaeModel, VaeVariant};

/// Latent points decoded for the generation figure: a 3x3 grid.
pub const GENERATION_GRID: [[f64; 2]; 9] = [
    [-7.5, 17.5],
    [0.0, 17.5],
    [12.5, 17.5],
    [-7.5, 7.5],
    [0.0, 7.5],
    [12.5, 7.5],
    [-7.5, 0.0],
    [0.0, 0.0],
    [12.5, 0.0],
];

pub const EMBEDDING_HEADER: &str = "index,label,mu_1,mu_2";
pub const WIDE_EMBEDDING_HEADER: &str = "index,window,label,mu_1,mu_2";
pub const GENERATION_HEADER: &str = "z_1,z_2,step,x,y";

const CHUNK: usize = 64;

fn encode_chunks(model: &VaeModel, view: DatasetView<'_>, mut f: impl FnMut(usize, &Tensor) -> Result<()>) -> Result<()> {
    let idx: Vec<usize> = (0..view.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let x = trajectories_tensor(chunk.iter().map(|&i| &view.get(i).trajectory), model.arch.input_len)?;
        let (mu, _) = model.encode(&x)?;
        f(chunk[0], &mu)?;
    }
    Ok(())
}

/// Posterior means of every trajectory in `view`. The 2D variant writes one
/// row per trajectory; the wide variant one row per latent window.
/// `index` is the position within `view`. Returns the row count.
pub fn export_embeddings<W: Write>(model: &VaeModel, view: DatasetView<'_>, w: &mut W) -> Result<usize> {
    let wide = model.arch.variant == VaeVariant::Wide31x2;
    writeln!(w, "{}", if wide { WIDE_EMBEDDING_HEADER } else { EMBEDDING_HEADER })?;
    let mut rows = 0;
    encode_chunks(model, view, |start, mu| {
        for b in 0..mu.dim(0) {
            let label = view.get(start + b).label.as_str();
            let r = mu.row(b);
            if wide {
                let t = mu.dim(2);
                for j in 0..t {
                    writeln!(w, "{},{j},{label},{},{}", start + b, r[j], r[t + j])?;
                    rows += 1;
                }
            } else {
                writeln!(w, "{},{label},{},{}", start + b, r[0], r[1])?;
                rows += 1;
            }
        }
        Ok(())
    })?;
    Ok(rows)
}

/// Decodes each point of [`GENERATION_GRID`] with header [`GENERATION_HEADER`].
pub fn export_generation_grid<W: Write>(model: &VaeModel, w: &mut W) -> Result<usize> {
    let mut generated = Vec::with_capacity(GENERATION_GRID.len());
    for z in GENERATION_GRID {
        generated.push((z, model.generate_from_latent(z)?));
    }
    writeln!(w, "{GENERATION_HEADER}")?;
    let mut rows = 0;
    for (z, path) in generated {
        for (k, q) in path.iter().enumerate() {
            writeln!(w, "{},{},{k},{},{}", z[0], z[1], q.x, q.y)?;
            rows += 1;
        }
    }
    Ok(rows)
}

/// Mean per-trajectory reconstruction MSE, keyed by label plus `all`.
pub fn reconstruction_mse_by_label(model: &VaeModel, view: DatasetView<'_>) -> Result<BTreeMap<String, f64>> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let idx: Vec<usize> = (0..view.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let x = trajectories_tensor(chunk.iter().map(|&i| &view.get(i).trajectory), model.arch.input_len)?;
        for (&i, mse) in chunk.iter().zip(model.reconstruction_mse(&x)?) {
            for key in [view.get(i).label.as_str(), "all"] {
                let e = sums.entry(key.to_string()).or_insert((0.0, 0));
                e.0 += mse;
                e.1 += 1;
            }
        }
    }
    Ok(sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, LabelRule, LabeledDataset};
    use crate::dynamics::SimParams;
    use crate::landscape::{Position, PotentialSpec, WellSpec};
    use crate::rng::RngStream;
    use crate::vae::VaeArch;

    fn tiny_dataset(n: usize) -> LabeledDataset {
        generate_dataset(
            n,
            Position::new(-1.05, -0.04),
            &SimParams::default().with_steps(40),
            &PotentialSpec::default(),
            &WellSpec::default(),
            3,
            LabelRule::FirstCrossing,
        )
        .unwrap()
    }

    fn model(variant: VaeVariant) -> VaeModel {
        VaeModel::new(VaeArch::tiny(variant), &mut RngStream::new(0, 0)).unwrap()
    }

    #[test]
    fn one_row_per_test_trajectory() {
        let ds = tiny_dataset(70);
        let mut out = Vec::new();
        let rows = export_embeddings(&model(VaeVariant::Bottleneck2D), ds.test_view(), &mut out).unwrap();
        assert_eq!(rows, ds.test.len());
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next(), Some(EMBEDDING_HEADER));
        assert_eq!(text.lines().count(), rows + 1);
        assert!(text.lines().all(|l| l.split(',').count() == 4));
    }

    #[test]
    fn one_row_per_window_for_wide() {
        let ds = tiny_dataset(70);
        let m = model(VaeVariant::Wide31x2);
        let t = m.arch.latent_len().unwrap();
        let mut out = Vec::new();
        let rows = export_embeddings(&m, ds.train_view(), &mut out).unwrap();
        assert_eq!(rows, t * ds.train.len());
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().all(|l| l.split(',').count() == 5));
    }

    #[test]
    fn embeddings_are_deterministic() {
        let ds = tiny_dataset(20);
        let m = model(VaeVariant::Bottleneck2D);
        let run = || {
            let mut out = Vec::new();
            export_embeddings(&m, ds.train_view(), &mut out).unwrap();
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn generation_grid_needs_the_2d_variant() {
        let mut out = Vec::new();
        assert!(matches!(
            export_generation_grid(&model(VaeVariant::Wide31x2), &mut out),
            Err(crate::Error::WrongVariant)
        ));
        let m = model(VaeVariant::Bottleneck2D);
        let mut out = Vec::new();
        let rows = export_generation_grid(&m, &mut out).unwrap();
        assert_eq!(rows, 9 * m.arch.input_len);
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().skip(1).all(|l| l.split(',').all(|v| v.parse::<f64>().unwrap().is_finite())));
    }

    #[test]
    fn mse_by_label_covers_all() {
        let ds = tiny_dataset(20);
        let m = model(VaeVariant::Bottleneck2D);
        let by = reconstruction_mse_by_label(&m, ds.train_view()).unwrap();
        let all = by["all"];
        assert!(all > 0.0 && all.is_finite());
        assert!(by.contains_key("none"));
    }
}
