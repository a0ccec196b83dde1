//! Evaluation report.
//!
//! Plain text: `key=value` lines, a `---` line, then a tab-separated table
//! with one row per dataset and one column per method. Floats are written
//! in shortest round-trip form so the file is exact.
//!
//! ```text
//! schema=1
//! suite.seed=<u64>
//! suite.count=<n>
//! suite.config_sha256=<hex>
//! suite.sha256=<hex>
//! checkpoint.sha256=<hex or none>
//! checkpoint.iteration=<u64 or none>
//! methods=<name>,<name>,...
//! method.<name>.mu=<f64>
//! method.<name>.sigma=<f64>
//! ---
//! dataset<TAB><name><TAB>...
//! 0<TAB><mce><TAB>...
//! ```

use metalearn_core::baselines::summarize;

use crate::error::{CliError, CliResult};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MethodScore {
    pub name: String,
    pub mu: f64,
    pub sigma: f64,
    pub per_dataset: Vec<f64>,
}

impl MethodScore {
    pub fn from_values(name: impl Into<String>, per_dataset: Vec<f64>) -> Self {
        let (mu, sigma) = summarize(&per_dataset);
        Self {
            name: name.into(),
            mu,
            sigma,
            per_dataset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub suite_seed: u64,
    pub suite_count: usize,
    pub suite_config_sha256: String,
    pub suite_sha256: String,
    pub checkpoint_sha256: Option<String>,
    pub checkpoint_iteration: Option<u64>,
    pub methods: Vec<MethodScore>,
}

impl Report {
    pub fn method(&self, name: &str) -> Option<&MethodScore> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn render(&self) -> String {
        let opt = |v: &Option<String>| v.clone().unwrap_or_else(|| "none".into());
        let mut out = format!(
            "schema={REPORT_SCHEMA}\nsuite.seed={}\nsuite.count={}\nsuite.config_sha256={}\nsuite.sha256={}\ncheckpoint.sha256={}\ncheckpoint.iteration={}\n",
            self.suite_seed,
            self.suite_count,
            self.suite_config_sha256,
            self.suite_sha256,
            opt(&self.checkpoint_sha256),
            opt(&self.checkpoint_iteration.map(|i| i.to_string())),
        );
        let names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        out.push_str(&format!("methods={}\n", names.join(",")));
        for m in &self.methods {
            out.push_str(&format!("method.{}.mu={}\n", m.name, m.mu));
            out.push_str(&format!("method.{}.sigma={}\n", m.name, m.sigma));
        }
        out.push_str("---\ndataset");
        for n in &names {
            out.push('\t');
            out.push_str(n);
        }
        out.push('\n');
        for i in 0..self.suite_count {
            out.push_str(&i.to_string());
            for m in &self.methods {
                out.push_str(&format!("\t{}", m.per_dataset[i]));
            }
            out.push('\n');
        }
        out
    }

    /// The summary table as printed to the terminal.
    pub fn table(&self) -> String {
        let width = self.methods.iter().map(|m| m.name.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  {:>6}  {:>6}\n", "method", "μ MCE", "σ MCE");
        for m in &self.methods {
            out.push_str(&format!("{:<width$}  {:>6.3}  {:>6.3}\n", m.name, m.mu, m.sigma));
        }
        out
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let bad = |msg: String| CliError::usage(format!("invalid report: {msg}"));
        let (head, table) = text
            .split_once("---\n")
            .ok_or_else(|| bad("missing `---`".into()))?;
        let fields: Vec<(&str, &str)> = head.lines().filter_map(|l| l.split_once('=')).collect();
        let get = |k: &str| {
            fields
                .iter()
                .find(|(key, _)| *key == k)
                .map(|(_, v)| *v)
                .ok_or_else(|| bad(format!("missing `{k}`")))
        };
        let num = |k: &str| -> CliResult<f64> {
            get(k)?.parse().map_err(|_| bad(format!("bad number for `{k}`")))
        };
        if get("schema")? != REPORT_SCHEMA.to_string() {
            return Err(bad("unsupported schema".into()));
        }
        let suite_count: usize = get("suite.count")?
            .parse()
            .map_err(|_| bad("bad suite.count".into()))?;
        let none_or = |v: &str| (v != "none").then(|| v.to_string());
        let names: Vec<String> = get("methods")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        let mut columns = vec![Vec::with_capacity(suite_count); names.len()];
        let mut rows = table.lines();
        rows.next();
        for (i, line) in rows.enumerate() {
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != names.len() + 1 || cells[0] != i.to_string() {
                return Err(bad(format!("malformed table row {i}")));
            }
            for (col, cell) in columns.iter_mut().zip(&cells[1..]) {
                col.push(cell.parse().map_err(|_| bad(format!("bad value in row {i}")))?);
            }
        }
        let mut methods = Vec::with_capacity(names.len());
        for (name, per_dataset) in names.into_iter().zip(columns) {
            if per_dataset.len() != suite_count {
                return Err(bad(format!("method {name} has {} rows", per_dataset.len())));
            }
            methods.push(MethodScore {
                mu: num(&format!("method.{name}.mu"))?,
                sigma: num(&format!("method.{name}.sigma"))?,
                name,
                per_dataset,
            });
        }
        Ok(Self {
            suite_seed: get("suite.seed")?
                .parse()
                .map_err(|_| bad("bad suite.seed".into()))?,
            suite_count,
            suite_config_sha256: get("suite.config_sha256")?.to_string(),
            suite_sha256: get("suite.sha256")?.to_string(),
            checkpoint_sha256: none_or(get("checkpoint.sha256")?),
            checkpoint_iteration: none_or(get("checkpoint.iteration")?)
                .map(|v| v.parse().map_err(|_| bad("bad checkpoint.iteration".into())))
                .transpose()?,
            methods,
        })
    }
}
