use std::path::{Path, PathBuf};

use super::{
    gen_blobs, gen_two_moons, load_idx, split_dataset, FeatureStats, LabelBudget, LabeledExample,
    SplitDataset,
};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    TwoMoons {
        n: usize,
        noise: f64,
    },
    Blobs {
        n: usize,
        centers: Vec<Vec<f64>>,
        std: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
    },
}

/// Everything needed to rebuild a [`SplitDataset`] from a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: DatasetSource,
    pub labels_per_class: LabelBudget,
    pub val_fraction: f64,
    /// Size of the independently generated test set (synthetic sources).
    pub n_test: usize,
    /// Share of rows held out for testing (file sources).
    pub test_fraction: f64,
    pub standardize: bool,
}

/// Reads a CSV file with a header row, feature columns and a trailing
/// integer label column. Returns the class count as `max(label) + 1`.
pub fn load_csv(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<usize>, usize)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let n = record.len();
        if n < 2 {
            return Err(Error::Dataset(format!(
                "{}: row {} needs at least one feature and a label",
                path.display(),
                line + 1
            )));
        }
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                Error::Dataset(format!(
                    "{}: row {}: bad number `{s}`",
                    path.display(),
                    line + 1
                ))
            })
        };
        let x = record
            .iter()
            .take(n - 1)
            .map(parse)
            .collect::<Result<Vec<_>>>()?;
        let label = record[n - 1].trim().parse::<usize>().map_err(|_| {
            Error::Dataset(format!(
                "{}: row {}: label `{}` is not a class index",
                path.display(),
                line + 1,
                &record[n - 1]
            ))
        })?;
        features.push(x);
        labels.push(label);
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    Ok((features, labels, k))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Dataset(format!("{}: {e}", path.display()))
    }
}

fn to_examples(features: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<LabeledExample> {
    features
        .iter()
        .zip(labels)
        .map(|(x, &c)| LabeledExample::new(x.clone(), c, k))
        .collect()
}

/// Generates or loads the data, splits it and optionally standardizes every
/// partition with statistics of the training inputs (labeled + unlabeled).
pub fn build_dataset(spec: &DatasetSpec, seed: u64) -> Result<SplitDataset> {
    let mut data_rng = Rng::stream(seed, "data");
    let mut split_rng = Rng::stream(seed, "split");

    let (train_x, train_y, test, k, image_dims) = match &spec.source {
        DatasetSource::TwoMoons { n, noise } => {
            let (x, y) = gen_two_moons(*n, *noise, &mut data_rng)?;
            let mut test_rng = Rng::stream(seed, "data-test");
            let (tx, ty) = gen_two_moons(spec.n_test.max(2), *noise, &mut test_rng)?;
            (x, y, to_examples(&tx, &ty, 2), 2, None)
        }
        DatasetSource::Blobs { n, centers, std } => {
            let (x, y) = gen_blobs(*n, centers, *std, &mut data_rng)?;
            let mut test_rng = Rng::stream(seed, "data-test");
            let (tx, ty) = gen_blobs(spec.n_test.max(2), centers, *std, &mut test_rng)?;
            let k = centers.len();
            (x, y, to_examples(&tx, &ty, k), k, None)
        }
        DatasetSource::Idx { images, labels } => {
            let (imgs, y) = load_idx(images, labels)?;
            let k = y.iter().max().map_or(0, |m| m + 1);
            let dims = Some((imgs.cols, imgs.rows));
            let (x, y, test) = hold_out(imgs.images, y, k, spec.test_fraction, &mut data_rng);
            (x, y, test, k, dims)
        }
        DatasetSource::Csv { path } => {
            let (x, y, k) = load_csv(path)?;
            let (x, y, test) = hold_out(x, y, k, spec.test_fraction, &mut data_rng);
            (x, y, test, k, None)
        }
    };
    if k < 2 {
        return Err(Error::Dataset(format!(
            "need at least two classes, found {k}"
        )));
    }

    let mut split = split_dataset(
        &train_x,
        &train_y,
        k,
        spec.labels_per_class,
        spec.val_fraction,
        &mut split_rng,
    )?;
    split.test = test;
    split.image_dims = image_dims;

    if spec.standardize {
        let stats = FeatureStats::fit(
            split
                .labeled
                .iter()
                .map(|e| e.x.as_slice())
                .chain(split.unlabeled.iter().map(Vec::as_slice)),
        );
        split.map_features(|x| stats.apply(x));
    }
    Ok(split)
}

fn hold_out(
    x: Vec<Vec<f64>>,
    y: Vec<usize>,
    k: usize,
    fraction: f64,
    rng: &mut Rng,
) -> (Vec<Vec<f64>>, Vec<usize>, Vec<LabeledExample>) {
    let order = rng.permutation(x.len());
    let n_test = (fraction * x.len() as f64).round() as usize;
    let test = order[..n_test]
        .iter()
        .map(|&i| LabeledExample::new(x[i].clone(), y[i], k))
        .collect();
    let rest = &order[n_test..];
    let tx = rest.iter().map(|&i| x[i].clone()).collect();
    let ty = rest.iter().map(|&i| y[i]).collect();
    (tx, ty, test)
}
