use std::collections::BTreeMap;

use super::run::CorrelationRow;
use super::stats::{delta_r, pearson, pearson_pvalue};
use crate::attack::AttackRow;
use crate::error::{Error, Result};
use crate::metrics::MetricRow;
use crate::rng;

fn push_unique(list: &mut Vec<String>, item: &str) {
    if !list.iter().any(|x| x == item) {
        list.push(item.to_string());
    }
}

fn layer_means<'a>(items: impl Iterator<Item = (usize, f64)> + 'a) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (l, v) in items.filter(|(_, v)| v.is_finite()) {
        let e = acc.entry(l).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect()
}

/// Correlates per-layer metric values with per-layer attack AUC from
/// previously written tables. Rows for the same layer are averaged.
///
/// `v_info/<property>` metrics are only paired with their own property.
pub fn correlate_tables(
    metrics: &[MetricRow],
    attacks: &[AttackRow],
    permutations: usize,
    seed: u64,
    baseline: Option<&str>,
) -> Result<Vec<CorrelationRow>> {
    let mut properties = Vec::new();
    for a in attacks {
        push_unique(&mut properties, &a.property);
    }
    if properties.is_empty() {
        return Err(Error::EmptyInput("attack rows"));
    }
    let base = baseline.unwrap_or(&properties[0]).to_string();
    if !properties.contains(&base) {
        return Err(Error::MissingPropertyValue(base));
    }
    let mut keys: Vec<(String, String)> = Vec::new();
    for m in metrics {
        let k = (m.metric_name.clone(), m.norm.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut rows = Vec::new();
    for property in &properties {
        let auc = layer_means(
            attacks
                .iter()
                .filter(|a| &a.property == property)
                .map(|a| (a.layer_index, a.auc)),
        );
        for (name, norm) in &keys {
            if let Some(p) = name.strip_prefix("v_info/") {
                if p != property {
                    continue;
                }
            }
            let values = layer_means(
                metrics
                    .iter()
                    .filter(|m| &m.metric_name == name && &m.norm == norm)
                    .map(|m| (m.layer_index, m.value)),
            );
            let (xs, ys): (Vec<f64>, Vec<f64>) = values
                .iter()
                .filter_map(|(l, v)| auc.get(l).map(|a| (*v, *a)))
                .unzip();
            let (r, p) = match pearson(&xs, &ys) {
                Ok(r) => {
                    let label = format!("pvalue:{property}:{name}:{norm}");
                    (r, pearson_pvalue(&xs, &ys, permutations, rng::derive_str(seed, &label))?)
                }
                Err(Error::ConstantVector | Error::InvalidConfig(_)) => (f64::NAN, f64::NAN),
                Err(e) => return Err(e),
            };
            let metric = name.split('/').next().unwrap_or(name).to_string();
            rows.push(CorrelationRow {
                property: property.clone(),
                metric,
                norm: norm.clone(),
                r,
                p_value: p,
                delta_r: f64::NAN,
                median_trial_r: f64::NAN,
                trials_with_r: 0,
                num_layers: xs.len(),
            });
        }
    }
    let base_rs: Vec<(String, String, f64)> = rows
        .iter()
        .filter(|r| r.property == base)
        .map(|r| (r.metric.clone(), r.norm.clone(), r.r))
        .collect();
    for row in &mut rows {
        if let Some((_, _, rb)) = base_rs.iter().find(|(m, n, _)| *m == row.metric && *n == row.norm) {
            row.delta_r = delta_r(*rb, row.r);
        }
    }
    Ok(rows)
}
