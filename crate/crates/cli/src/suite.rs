//! Suite files: a set of generated datasets plus everything needed to
//! regenerate them.

use std::path::Path;

use metalearn_core::container::{parse_field, parse_header, Container, FormatError, SectionData};
use metalearn_core::episode::LabeledDataset;

use crate::error::{CliError, CliResult};

pub const SUITE_MAGIC: &[u8; 8] = b"MLLSTMSU";
pub const SUITE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub seed: u64,
    pub n_in: usize,
    pub config_echo: String,
    pub datasets: Vec<LabeledDataset>,
}

impl Suite {
    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = format!(
            "seed={}\ncount={}\nn_in={}\n---\n{}",
            self.seed,
            self.datasets.len(),
            self.n_in,
            self.config_echo
        );
        let mut sections = Vec::with_capacity(3 * self.datasets.len());
        for (i, d) in self.datasets.iter().enumerate() {
            sections.push((format!("d{i}/x"), SectionData::F64(d.inputs().to_vec())));
            sections.push((format!("d{i}/y"), SectionData::U8(d.targets().to_vec())));
            sections.push((format!("d{i}/tau"), SectionData::U64(vec![d.tau() as u64])));
        }
        Container { header, sections }.encode(SUITE_MAGIC, SUITE_VERSION)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let c = Container::decode(bytes, SUITE_MAGIC, SUITE_VERSION)?;
        let (fields, config_echo) = parse_header(&c.header);
        let seed: u64 = parse_field(&fields, "seed")?;
        let count: usize = parse_field(&fields, "count")?;
        let n_in: usize = parse_field(&fields, "n_in")?;
        if c.sections.len() != 3 * count {
            return Err(FormatError::Header(format!(
                "count={count} but {} sections present",
                c.sections.len()
            )));
        }
        let bad = |name: String, reason: String| FormatError::Section { name, reason };
        let mut it = c.sections.into_iter();
        let mut datasets = Vec::with_capacity(count);
        for i in 0..count {
            let x = match Container::expect_section(&mut it, &format!("d{i}/x"))? {
                SectionData::F64(v) => v,
                _ => return Err(bad(format!("d{i}/x"), "expected f64".into())),
            };
            let y = match Container::expect_section(&mut it, &format!("d{i}/y"))? {
                SectionData::U8(v) => v,
                _ => return Err(bad(format!("d{i}/y"), "expected u8".into())),
            };
            let tau = match Container::expect_section(&mut it, &format!("d{i}/tau"))? {
                SectionData::U64(v) if v.len() == 1 => v[0] as usize,
                _ => return Err(bad(format!("d{i}/tau"), "expected one u64".into())),
            };
            let d = LabeledDataset::new(n_in, x, y, tau)
                .map_err(|e| bad(format!("d{i}"), e.to_string()))?;
            datasets.push(d);
        }
        Ok(Self {
            seed,
            n_in,
            config_echo,
            datasets,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| CliError::runtime(format!("cannot write suite {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::usage(format!("cannot read suite {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
            .map_err(|e| CliError::usage(format!("invalid suite {}: {e}", path.display())))
    }

    /// Writes `d<i>.csv` per dataset into `dir`: columns x0.., y, split.
    pub fn export_csv(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
        for (i, d) in self.datasets.iter().enumerate() {
            let mut out = String::new();
            for k in 0..self.n_in {
                out.push_str(&format!("x{k},"));
            }
            out.push_str("y,split\n");
            for t in 1..=d.len() {
                for v in d.row(t) {
                    out.push_str(&format!("{v},"));
                }
                let split = if d.is_train(t) { "train" } else { "test" };
                out.push_str(&format!("{},{split}\n", d.target(t)));
            }
            let path = dir.join(format!("d{i}.csv"));
            std::fs::write(&path, out)
                .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(())
    }
}
