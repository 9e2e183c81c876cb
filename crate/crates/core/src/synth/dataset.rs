//! Labeled multi-domain samples and their delimited-text file format.
//!
//! Header `domain,label,x_0,...,x_{n-1}`; domain `-1` marks the target.
//! Floats are written with 17 significant digits so reading back is exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DomainTag {
    Source(usize),
    Target,
}

impl DomainTag {
    pub fn as_i64(self) -> i64 {
        match self {
            DomainTag::Source(d) => d as i64,
            DomainTag::Target => -1,
        }
    }

    pub fn from_i64(v: i64) -> Result<Self> {
        match v {
            -1 => Ok(DomainTag::Target),
            d if d >= 0 => Ok(DomainTag::Source(d as usize)),
            d => Err(Error::DatasetFormat(format!("invalid domain tag {d}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub domain: DomainTag,
    pub label: usize,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(dim: usize, samples: Vec<Sample>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionTooSmall(0));
        }
        if let Some(s) = samples.iter().find(|s| s.x.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.x.len(),
            });
        }
        Ok(Self { dim, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One more than the largest label present.
    pub fn label_bound(&self) -> usize {
        self.samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["domain".to_string(), "label".to_string()];
        header.extend((0..self.dim).map(|i| format!("x_{i}")));
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(self.dim + 2);
        for s in &self.samples {
            row.clear();
            row.push(s.domain.as_i64().to_string());
            row.push(s.label.to_string());
            row.extend(s.x.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "domain" || &header[1] != "label" {
            return Err(Error::DatasetFormat(
                "header must start with domain,label".into(),
            ));
        }
        let dim = header.len() - 2;
        for (i, h) in header.iter().skip(2).enumerate() {
            if h != format!("x_{i}") {
                return Err(Error::DatasetFormat(format!("unexpected column {h:?}")));
            }
        }
        let mut samples = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::DatasetFormat(format!("row {}: bad {what}", line + 1));
            let domain: i64 = rec[0].parse().map_err(|_| bad("domain"))?;
            let label: usize = rec[1].parse().map_err(|_| bad("label"))?;
            let x = rec
                .iter()
                .skip(2)
                .map(|v| v.parse::<f64>().map_err(|_| bad("value")))
                .collect::<Result<Vec<_>>>()?;
            samples.push(Sample {
                domain: DomainTag::from_i64(domain)?,
                label,
                x,
            });
        }
        Self::new(dim, samples)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }

    /// Splits every label group independently, sending `round(fraction·n)`
    /// samples of each group to the second half. Original order is kept
    /// inside both halves.
    pub fn stratified_split<R: Rng + ?Sized>(
        &self,
        fraction: f64,
        rng: &mut R,
    ) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::invalid(
                "train.validation_fraction",
                "must be in [0, 1)",
            ));
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            groups.entry(s.label).or_default().push(i);
        }
        let mut held = vec![false; self.samples.len()];
        for idx in groups.values_mut() {
            idx.shuffle(rng);
            let k = (fraction * idx.len() as f64).round() as usize;
            for &i in idx.iter().take(k) {
                held[i] = true;
            }
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (s, &h) in self.samples.iter().zip(&held) {
            if h {
                b.push(s.clone());
            } else {
                a.push(s.clone());
            }
        }
        Ok((Dataset::new(self.dim, a)?, Dataset::new(self.dim, b)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Dataset {
        let samples = (0..10)
            .map(|i| Sample {
                domain: if i % 3 == 0 {
                    DomainTag::Target
                } else {
                    DomainTag::Source(i % 3)
                },
                label: i % 2,
                x: vec![i as f64 * 0.1, -1.0 / 3.0, f64::MIN_POSITIVE, -0.0],
            })
            .collect();
        Dataset::new(4, samples).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let d = toy();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("domain,label,x_0,x_1,x_2,x_3\n-1,0,"));
        let back = Dataset::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.len(), d.len());
        for (a, b) in back.samples().iter().zip(d.samples()) {
            assert_eq!(a.domain, b.domain);
            assert_eq!(a.label, b.label);
            let ab: Vec<u64> = a.x.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.x.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(Dataset::read_from("a,b,c\n".as_bytes()).is_err());
        assert!(Dataset::read_from("domain,label,x_0\n-2,0,1.0\n".as_bytes()).is_err());
        assert!(Dataset::read_from("domain,label,x_0\n0,0,abc\n".as_bytes()).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let samples = (0..100)
            .map(|i| Sample {
                domain: DomainTag::Source(0),
                label: if i < 60 { 0 } else { 1 },
                x: vec![i as f64],
            })
            .collect();
        let d = Dataset::new(1, samples).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (train, val) = d.stratified_split(0.2, &mut rng).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(val.samples().iter().filter(|s| s.label == 0).count(), 12);
        assert_eq!(val.samples().iter().filter(|s| s.label == 1).count(), 8);
    }
}
