//! Datasets: Gaussian-mixture generation and the delimited text format.
//!
//! Text format: a header row, then one sample per row. The header names a
//! `label` column, optionally a `split` column (`train` / `test`), and the
//! remaining columns are the input features in order.
//!
//! ```text
//! split,label,x0,x1
//! train,cat,0.5,1.25
//! test,dog,-0.75,2
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{derive_seed, l2_normalize, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassData {
    pub label: String,
    pub train: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
}

/// Per-class train/test samples. Class order is first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_dim: usize,
    pub classes: Vec<ClassData>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.label == label)
    }

    pub fn train_count(&self) -> usize {
        self.classes.iter().map(|c| c.train.len()).sum()
    }

    pub fn test_count(&self) -> usize {
        self.classes.iter().map(|c| c.test.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for c in &self.classes {
            if c.train.is_empty() {
                return Err(Error::InvalidConfig(format!("class '{}' has no training samples", c.label)));
            }
            for x in c.train.iter().chain(&c.test) {
                if x.len() != self.input_dim {
                    return Err(Error::Shape {
                        context: "dataset sample",
                        expected: self.input_dim,
                        got: x.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub modes_per_class: usize,
    /// Norm of every mode center.
    pub separation: f64,
    /// Per-coordinate standard deviation around a mode center.
    pub noise: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The desk-scale benchmark: 10 classes of 64-dim inputs, two modes per
    /// class, 200 train / 100 test samples each.
    pub fn toy_ibench(seed: u64) -> Self {
        SyntheticSpec {
            classes: 10,
            dim: 64,
            modes_per_class: 2,
            separation: 4.0,
            noise: 1.0,
            train_per_class: 200,
            test_per_class: 100,
            seed,
        }
    }
}

/// Each class is an equal-weight mixture of `modes_per_class` isotropic
/// Gaussians whose centers point in random directions at distance
/// `separation` from the origin.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.dim == 0 || spec.modes_per_class == 0 {
        return Err(Error::InvalidConfig("classes, dim and modes must be >= 1".into()));
    }
    if !(spec.separation > 0.0) || !(spec.noise >= 0.0) {
        return Err(Error::InvalidConfig("separation must be > 0 and noise >= 0".into()));
    }
    if spec.train_per_class == 0 {
        return Err(Error::InvalidConfig("need at least one training sample per class".into()));
    }
    let classes = (0..spec.classes)
        .map(|c| {
            let mut rng = RngStream::new(derive_seed(spec.seed, c as u64));
            let centers: Vec<Vec<f64>> = (0..spec.modes_per_class)
                .map(|_| loop {
                    let v: Vec<f64> = (0..spec.dim).map(|_| rng.normal()).collect();
                    if let Ok(u) = l2_normalize(&v) {
                        break u.as_slice().iter().map(|x| x * spec.separation).collect();
                    }
                })
                .collect();
            let mut draw = |n: usize| -> Vec<Vec<f64>> {
                (0..n)
                    .map(|i| {
                        let center = &centers[i % centers.len()];
                        center.iter().map(|m| m + spec.noise * rng.normal()).collect()
                    })
                    .collect()
            };
            let train = draw(spec.train_per_class);
            let test = draw(spec.test_per_class);
            ClassData {
                label: format!("c{c}"),
                train,
                test,
            }
        })
        .collect();
    Ok(Dataset {
        input_dim: spec.dim,
        classes,
    })
}

/// Where the train/test assignment of a row comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSource {
    /// A `split` column in the header.
    Column,
    /// Every row is a training sample.
    AllTrain,
    /// Every row is a test sample.
    AllTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelimitedSchema {
    pub delimiter: u8,
    pub split: SplitSource,
}

impl Default for DelimitedSchema {
    fn default() -> Self {
        DelimitedSchema {
            delimiter: b',',
            split: SplitSource::Column,
        }
    }
}

#[derive(Default)]
struct Builder {
    input_dim: Option<usize>,
    classes: Vec<ClassData>,
}

impl Builder {
    fn add(&mut self, label: &str, x: Vec<f64>, is_test: bool, line: u64) -> Result<()> {
        match self.input_dim {
            None => self.input_dim = Some(x.len()),
            Some(d) if d != x.len() => {
                return Err(Error::RowShape {
                    line,
                    expected: d,
                    got: x.len(),
                })
            }
            _ => {}
        }
        let idx = match self.classes.iter().position(|c| c.label == label) {
            Some(i) => i,
            None => {
                self.classes.push(ClassData {
                    label: label.to_string(),
                    train: Vec::new(),
                    test: Vec::new(),
                });
                self.classes.len() - 1
            }
        };
        let class = &mut self.classes[idx];
        if is_test {
            class.test.push(x);
        } else {
            class.train.push(x);
        }
        Ok(())
    }

    fn read(&mut self, path: &Path, schema: &DelimitedSchema) -> Result<()> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(schema.delimiter)
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let label_col = headers
            .iter()
            .position(|h| h == "label")
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "header has no 'label' column".into(),
            })?;
        let split_col = match schema.split {
            SplitSource::Column => Some(headers.iter().position(|h| h == "split").ok_or_else(|| {
                Error::Parse {
                    line: 1,
                    message: "header has no 'split' column".into(),
                }
            })?),
            _ => None,
        };
        let feature_cols: Vec<usize> = (0..headers.len())
            .filter(|&i| i != label_col && Some(i) != split_col)
            .collect();

        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != headers.len() {
                return Err(Error::RowShape {
                    line,
                    expected: headers.len(),
                    got: record.len(),
                });
            }
            let is_test = match (schema.split, split_col) {
                (SplitSource::AllTest, _) => true,
                (SplitSource::AllTrain, _) => false,
                (SplitSource::Column, Some(c)) => match &record[c] {
                    "train" => false,
                    "test" => true,
                    other => {
                        return Err(Error::Parse {
                            line,
                            message: format!("split must be 'train' or 'test', found '{other}'"),
                        })
                    }
                },
                (SplitSource::Column, None) => unreachable!(),
            };
            let x = feature_cols
                .iter()
                .map(|&c| {
                    let field = &record[c];
                    field
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Parse {
                            line,
                            message: format!("'{field}' is not a finite number"),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            self.add(&record[label_col], x, is_test, line)?;
        }
        Ok(())
    }

    fn finish(self) -> Result<Dataset> {
        let input_dim = self.input_dim.ok_or(Error::EmptyDataset)?;
        if input_dim == 0 {
            return Err(Error::Parse {
                line: 1,
                message: "no feature columns".into(),
            });
        }
        Ok(Dataset {
            input_dim,
            classes: self.classes,
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Reads one delimited file. Classes that only appear in test rows are kept
/// but will fail [`Dataset::validate`].
pub fn load_delimited(path: impl AsRef<Path>, schema: &DelimitedSchema) -> Result<Dataset> {
    let mut b = Builder::default();
    b.read(path.as_ref(), schema)?;
    b.finish()
}

/// Reads a training file and a separate test file (no split columns).
pub fn load_delimited_pair(
    train: impl AsRef<Path>,
    test: impl AsRef<Path>,
    delimiter: u8,
) -> Result<Dataset> {
    let mut b = Builder::default();
    b.read(
        train.as_ref(),
        &DelimitedSchema {
            delimiter,
            split: SplitSource::AllTrain,
        },
    )?;
    b.read(
        test.as_ref(),
        &DelimitedSchema {
            delimiter,
            split: SplitSource::AllTest,
        },
    )?;
    b.finish()
}

/// Writes the dataset with a split column. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_delimited(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["split".to_string(), "label".to_string()];
    header.extend((0..ds.input_dim).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for c in &ds.classes {
        for (split, rows) in [("train", &c.train), ("test", &c.test)] {
            for x in rows {
                let mut rec = vec![split.to_string(), c.label.clone()];
                rec.extend(x.iter().map(|v| v.to_string()));
                w.write_record(&rec).map_err(|e| csv_error(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
