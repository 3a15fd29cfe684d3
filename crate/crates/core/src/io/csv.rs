//! Choice datasets as CSV.
//!
//! One row per observation: a column per feature (named as in the model), an
//! `avail_<alternative>` column per alternative holding `0` or `1`, and a
//! `choice` column with the chosen alternative's name. Other columns are ignored.
//! Row numbers in errors are file line numbers (the header is line 1).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ChoiceDataset, ChoiceObservation, ModelSpec};

pub const CHOICE_COLUMN: &str = "choice";

pub fn availability_column(alternative: &str) -> String {
    format!("avail_{alternative}")
}

pub fn read_dataset(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<ChoiceDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).context(format!("opening {}", path.display())))?;
    read_dataset_from(file, spec).map_err(|e| e.context(format!("reading {}", path.display())))
}

pub fn read_dataset_from(reader: impl Read, spec: &ModelSpec) -> Result<ChoiceDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(1, "", e.to_string()))?.clone();
    let find =
        |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| csv_error(1, name, "missing column".into()));
    let feature_cols = spec.features().iter().map(|f| find(f)).collect::<Result<Vec<_>>>()?;
    let avail_names: Vec<String> = spec.alternatives().iter().map(|a| availability_column(a)).collect();
    let avail_cols = avail_names.iter().map(|a| find(a)).collect::<Result<Vec<_>>>()?;
    let choice_col = find(CHOICE_COLUMN)?;

    let mut observations = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| {
            let line = e.position().map_or(line, |p| p.line() as usize);
            csv_error(line, "", e.to_string())
        })?;
        let field =
            |col: usize, name: &str| record.get(col).ok_or_else(|| csv_error(line, name, "missing value".into()));
        let mut x = Vec::with_capacity(feature_cols.len());
        for (&col, name) in feature_cols.iter().zip(spec.features()) {
            let raw = field(col, name)?;
            let v: f64 = raw.parse().map_err(|_| csv_error(line, name, format!("`{raw}` is not a number")))?;
            if !v.is_finite() {
                return Err(csv_error(line, name, format!("`{raw}` is not finite")));
            }
            x.push(v);
        }
        let mut available = Vec::new();
        for (i, (&col, name)) in avail_cols.iter().zip(&avail_names).enumerate() {
            match field(col, name)? {
                "1" => available.push(i),
                "0" => {}
                other => return Err(csv_error(line, name, format!("expected 0 or 1, got `{other}`"))),
            }
        }
        let choice = field(choice_col, CHOICE_COLUMN)?;
        let chosen = spec
            .alternative_index(choice)
            .ok_or_else(|| csv_error(line, CHOICE_COLUMN, format!("unknown alternative `{choice}`")))?;
        if !available.contains(&chosen) {
            return Err(csv_error(
                line,
                &availability_column(choice),
                format!("chosen alternative `{choice}` is not available"),
            ));
        }
        if available.len() < 2 {
            return Err(csv_error(line, "avail_*", "fewer than two alternatives available".into()));
        }
        observations.push(ChoiceObservation::new(x, available, chosen)?);
    }
    ChoiceDataset::new(spec.features().to_vec(), observations)
}

fn csv_error(row: usize, column: &str, message: String) -> Error {
    Error::Csv { row, column: column.to_string(), message }
}

pub fn write_dataset(path: impl AsRef<Path>, spec: &ModelSpec, data: &ChoiceDataset) -> Result<()> {
    let path = path.as_ref();
    let file =
        std::fs::File::create(path).map_err(|e| Error::from(e).context(format!("creating {}", path.display())))?;
    let mut out = std::io::BufWriter::new(file);
    write_dataset_to(&mut out, spec, data)?;
    out.flush()?;
    Ok(())
}

pub fn write_dataset_to(writer: impl Write, spec: &ModelSpec, data: &ChoiceDataset) -> Result<()> {
    data.check_spec(spec)?;
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = spec.features().to_vec();
    header.extend(spec.alternatives().iter().map(|a| availability_column(a)));
    header.push(CHOICE_COLUMN.into());
    w.write_record(&header).map_err(to_io)?;
    for obs in data {
        let mut row: Vec<String> = obs.x().iter().map(|v| v.to_string()).collect();
        row.extend((0..spec.n_alternatives()).map(|i| if obs.is_available(i) { "1" } else { "0" }.to_string()));
        row.push(spec.alternatives()[obs.chosen()].clone());
        w.write_record(&row).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

fn to_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
