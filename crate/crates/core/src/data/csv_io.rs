//! Long-format CSV datasets.
//!
//! Header: `sample_id,t,v1,...,vV[,label]`. One row per (sample, step);
//! `t` counts from 0 and must strictly increase within a sample. An empty
//! variate cell is a missing value, and steps with no row are entirely
//! missing. A sidecar `<file>.meta` holds `key=value` lines with `V`,
//! `n_samples`, `labels` and `split`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::sample::{Dataset, MtsSample, Split};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

struct Partial {
    id: String,
    last_t: Option<usize>,
    rows: Vec<(usize, Vec<Option<f64>>)>,
    label: Option<usize>,
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "sample_id" || &headers[1] != "t" {
        return Err(Error::Data(format!(
            "{}: header must start with sample_id,t and name at least one variate",
            path.display()
        )));
    }
    let has_label = &headers[headers.len() - 1] == "label";
    let n_vars = headers.len() - 2 - usize::from(has_label);
    if n_vars == 0 {
        return Err(Error::Data(format!("{}: no variate columns", path.display())));
    }

    let mut order: Vec<Partial> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let row_no = line + 2;
        let id = record[0].to_string();
        let t: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("line {row_no}: bad time index '{}'", &record[1])))?;
        let mut values = Vec::with_capacity(n_vars);
        for v in 0..n_vars {
            let cell = record[2 + v].trim();
            if cell.is_empty() {
                values.push(None);
            } else {
                let x: f64 = cell
                    .parse()
                    .map_err(|_| Error::Data(format!("line {row_no}: unparsable value '{cell}'")))?;
                if !x.is_finite() {
                    return Err(Error::Data(format!("line {row_no}: non-finite value '{cell}'")));
                }
                values.push(Some(x));
            }
        }
        let label = if has_label {
            let cell = record[headers.len() - 1].trim();
            if cell.is_empty() {
                None
            } else {
                Some(
                    cell.parse::<usize>()
                        .map_err(|_| Error::Data(format!("line {row_no}: bad label '{cell}'")))?,
                )
            }
        } else {
            None
        };
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(Partial {
                id,
                last_t: None,
                rows: Vec::new(),
                label: None,
            });
            order.len() - 1
        });
        let p = &mut order[slot];
        if p.last_t.is_some_and(|last| t <= last) {
            return Err(Error::Data(format!(
                "line {row_no}: time index {t} of sample '{}' is not increasing",
                p.id
            )));
        }
        p.last_t = Some(t);
        if label.is_some() {
            if p.label.is_some() && p.label != label {
                return Err(Error::Data(format!("sample '{}' has conflicting labels", p.id)));
            }
            p.label = label;
        }
        p.rows.push((t, values));
    }

    let samples = order
        .into_iter()
        .map(|p| {
            let len = p.last_t.map_or(0, |t| t + 1);
            let mut values = Matrix::zeros(n_vars, len);
            let mut mask = vec![false; n_vars * len];
            for (t, row) in &p.rows {
                for (v, x) in row.iter().enumerate() {
                    if let Some(x) = x {
                        values[(v, *t)] = *x;
                        mask[v * len + t] = true;
                    }
                }
            }
            MtsSample::with_mask(p.id, values, mask, p.label)
        })
        .collect::<Result<Vec<_>>>()?;

    let split = match read_meta(path)? {
        Some(meta) => {
            if let Some(v) = meta.get("V") {
                if v.parse::<usize>().ok() != Some(n_vars) {
                    return Err(Error::Data(format!(
                        "metadata says V={v} but the file has {n_vars} variates"
                    )));
                }
            }
            meta.get("split").map(|s| s.parse()).transpose()?.unwrap_or_default()
        }
        None => Split::default(),
    };
    Dataset::new(samples, split)
}

fn format_value(x: f64) -> String {
    // `Display` for f64 is the shortest string that parses back to the same bits.
    format!("{x}")
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let labels = ds.samples().iter().any(|s| s.label.is_some());
    let mut out = String::from("sample_id,t");
    for v in 1..=ds.n_vars() {
        out.push_str(&format!(",v{v}"));
    }
    if labels {
        out.push_str(",label");
    }
    out.push('\n');
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for s in ds.samples() {
        for t in 0..s.len() {
            let mut row = vec![s.id.clone(), t.to_string()];
            for v in 0..s.n_vars() {
                row.push(s.get(v, t).map(format_value).unwrap_or_default());
            }
            if labels {
                row.push(s.label.map(|l| l.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
    }
    let body = w
        .into_inner()
        .map_err(|e| Error::Data(format!("csv writer: {e}")))?;
    out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    fs::write(path, out).map_err(|e| Error::io(path, e))?;

    let meta = format!(
        "V={}\nn_samples={}\nlabels={}\nsplit={}\n",
        ds.n_vars(),
        ds.len(),
        ds.has_labels(),
        ds.split
    );
    let meta_path = meta_path(path);
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

fn read_meta(path: &Path) -> Result<Option<HashMap<String, String>>> {
    let mp = meta_path(path);
    if !mp.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let mut map = HashMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("{}: bad metadata line '{line}'", mp.display())))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(Some(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn complete_rows_give_full_masks() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "sample_id,t,v1,v2\na,0,1,2\na,1,3,4\nb,0,5,6\nb,1,7,8\nb,2,9,10\n",
        );
        let d = load_csv(&p).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.n_vars(), 2);
        assert!(d.samples().iter().all(|s| s.mask().iter().all(|&m| m)));
        assert_eq!(d[1].len(), 3);
        assert_eq!(d[1].value(1, 2), 10.0);
    }

    #[test]
    fn empty_cell_is_missing() {
        let dir = tempfile::tempdir().unwrap();
        // Sample 1, step 3, variate 2 (one-based names) is empty.
        let mut body = String::from("sample_id,t,v1,v2,v3\n");
        for s in 0..2 {
            for t in 0..5 {
                let v2 = if s == 1 && t == 3 { String::new() } else { format!("{}", t * 10 + s) };
                body.push_str(&format!("{s},{t},1.5,{v2},-2\n"));
            }
        }
        let d = load_csv(write(dir.path(), "m.csv", &body)).unwrap();
        assert!(!d[1].observed(1, 3));
        assert_eq!(d[1].n_observed(), 14);
        assert_eq!(d[0].n_observed(), 15);
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "sample_id,t,v1,v2\na,0,1,2\na,1,3\n");
        assert!(matches!(load_csv(&p), Err(Error::Data(_)) | Err(Error::Csv(_))));
    }

    #[test]
    fn non_monotone_time_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.csv", "sample_id,t,v1\na,0,1\na,2,3\na,1,4\n");
        assert!(matches!(load_csv(&p), Err(Error::Data(_))));
    }

    #[test]
    fn unparsable_number_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "n.csv", "sample_id,t,v1\na,0,1.2.3\n");
        assert!(matches!(load_csv(&p), Err(Error::Data(_))));
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let s1 = MtsSample::with_mask(
            "x",
            Matrix::from_rows(&[vec![0.1, 1.0 / 3.0, -7e-12], vec![5.0, f64::NAN, 2.5e8]]),
            vec![true, true, true, true, false, true],
            Some(2),
        )
        .unwrap();
        let s2 = MtsSample::new("y", Matrix::from_rows(&[vec![1.0], vec![-1.0]]), Some(0)).unwrap();
        let d = Dataset::new(vec![s1, s2], Split::Test).unwrap();
        let p = dir.path().join("rt.csv");
        save_csv(&d, &p).unwrap();
        let back = load_csv(&p).unwrap();
        assert_eq!(back.split, Split::Test);
        assert_eq!(back.len(), 2);
        for (a, b) in d.samples().iter().zip(back.samples()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.label, b.label);
            assert_eq!(a.mask(), b.mask());
            for (x, y) in a.values().as_slice().iter().zip(b.values().as_slice()) {
                assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }
}
