//! Per-epoch metrics and their CSV form.
//!
//! Layout: one `# ...` comment line holding the run configuration, a header
//! row, then one row per epoch. Floats are written with 17 significant
//! digits so a reload reproduces them exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const FIXED_COLUMNS: [&str; 6] = ["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learned strides in the order of [`MetricsLog::stride_columns`].
    pub strides: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    /// Run description written after `#`; must not contain newlines.
    pub comment: String,
    /// `<layer>.s_h` / `<layer>.s_w` column names.
    pub stride_columns: Vec<String>,
    pub rows: Vec<MetricsRow>,
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

impl MetricsLog {
    pub fn new(comment: impl Into<String>, stride_layers: &[String]) -> Self {
        MetricsLog {
            comment: comment.into().replace(['\n', '\r'], " "),
            stride_columns: stride_layers
                .iter()
                .flat_map(|l| [format!("{l}.s_h"), format!("{l}.s_w")])
                .collect(),
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> Vec<String> {
        FIXED_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain(self.stride_columns.iter().cloned())
            .collect()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut out = out;
        write!(out, "# {}\r\n", self.comment).map_err(|e| Error::io("<metrics>", e))?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(out);
        let csv_err = |e: csv::Error| Error::Data(format!("csv write failed: {e}"));
        w.write_record(self.header()).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.epoch.to_string(),
                float(r.lr),
                float(r.train_loss),
                float(r.train_acc),
                float(r.val_loss),
                float(r.val_acc),
            ];
            rec.extend(r.strides.iter().map(|&s| float(s)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<metrics>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| Error::io("<metrics>", e))?;
        let bad = |msg: String| Error::Format {
            path: "<metrics>".into(),
            msg,
        };
        let comment = first
            .trim_end_matches(['\r', '\n'])
            .strip_prefix("# ")
            .ok_or_else(|| bad("missing leading `# ` comment line".into()))?
            .to_string();
        let mut r = csv::ReaderBuilder::new().from_reader(reader);
        let header: Vec<String> = r
            .headers()
            .map_err(|e| bad(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() < FIXED_COLUMNS.len() || header[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let f: Vec<&str> = rec.iter().collect();
            rows.push(MetricsRow {
                epoch: f[0].parse().map_err(|_| bad(format!("bad epoch `{}`", f[0])))?,
                lr: num(f[1])?,
                train_loss: num(f[2])?,
                train_acc: num(f[3])?,
                val_loss: num(f[4])?,
                val_acc: num(f[5])?,
                strides: f[6..].iter().map(|s| num(s)).collect::<Result<_>>()?,
            });
        }
        Ok(MetricsLog {
            comment,
            stride_columns: header[FIXED_COLUMNS.len()..].to_vec(),
            rows,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f).map_err(|e| match e {
            Error::Format { msg, .. } => Error::Format { path: path.into(), msg },
            other => other,
        })
    }
}
