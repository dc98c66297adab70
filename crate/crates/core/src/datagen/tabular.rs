use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Loads a header-first, comma-separated file.
///
/// Main labels and properties are mapped to indices by sorted distinct
/// value (numeric order when every value parses as a number). An empty
/// `feature_columns` selects every column not used as a label.
pub fn load_csv(
    path: &Path,
    main_label_column: &str,
    property_columns: &[String],
    feature_columns: &[String],
) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_reader(file, main_label_column, property_columns, feature_columns)
}

pub fn load_csv_reader<R: Read>(
    reader: R,
    main_label_column: &str,
    property_columns: &[String],
    feature_columns: &[String],
) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Parse {
            row: 0,
            column: String::new(),
            detail: "missing header row".into(),
        });
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let label_idx = col(main_label_column)?;
    let prop_idx = property_columns.iter().map(|p| col(p)).collect::<Result<Vec<_>>>()?;
    let feat_idx: Vec<usize> = if feature_columns.is_empty() {
        (0..headers.len())
            .filter(|i| *i != label_idx && !prop_idx.contains(i))
            .collect()
    } else {
        feature_columns.iter().map(|f| col(f)).collect::<Result<_>>()?
    };
    if feat_idx.is_empty() {
        return Err(Error::InvalidConfig("no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    let mut raw_props: Vec<Vec<String>> = vec![Vec::new(); prop_idx.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        // row numbers are 1-based data rows, the header being row 0
        let row = row + 1;
        for &i in &feat_idx {
            let cell = record.get(i).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: headers[i].to_string(),
                detail: format!("`{cell}` is not a number"),
            })?;
            features.push(v);
        }
        raw_labels.push(record.get(label_idx).unwrap_or("").trim().to_string());
        for (j, &i) in prop_idx.iter().enumerate() {
            raw_props[j].push(record.get(i).unwrap_or("").trim().to_string());
        }
    }
    let k = raw_labels.len();
    if k == 0 {
        return Err(Error::Parse {
            row: 1,
            column: String::new(),
            detail: "no data rows".into(),
        });
    }
    let (labels, classes) = encode_sorted(&raw_labels);
    let mut properties = BTreeMap::new();
    for (name, values) in property_columns.iter().zip(raw_props) {
        let (codes, distinct) = encode_sorted(&values);
        if distinct != 2 {
            return Err(Error::NonBinaryProperty {
                column: name.clone(),
                distinct,
            });
        }
        properties.insert(name.clone(), codes.into_iter().map(|c| c as u8).collect());
    }
    let inputs = Tensor::new(vec![k, feat_idx.len()], features)?;
    LabeledDataset::new(inputs, labels, classes.max(2), properties)
}

/// Codes each value by its rank among the sorted distinct values.
fn encode_sorted(values: &[String]) -> (Vec<usize>, usize) {
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
    let mut distinct: Vec<&String> = values.iter().collect();
    match &numeric {
        Some(nums) => {
            let mut pairs: Vec<(f64, &String)> = nums.iter().copied().zip(values).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            distinct = pairs.into_iter().map(|(_, s)| s).collect();
            distinct.dedup_by(|a, b| a.parse::<f64>().ok() == b.parse::<f64>().ok());
        }
        None => {
            distinct.sort();
            distinct.dedup();
        }
    }
    let codes = values
        .iter()
        .map(|v| {
            distinct
                .iter()
                .position(|d| match &numeric {
                    Some(_) => d.parse::<f64>().ok() == v.parse::<f64>().ok(),
                    None => *d == v,
                })
                .expect("value is among distinct values")
        })
        .collect();
    (codes, distinct.len())
}
