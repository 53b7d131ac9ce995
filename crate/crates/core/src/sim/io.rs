//! Long-format CSV for rotating-panel samples:
//!
//! ```text
//! occasion,cluster_id,unit,value
//! 0,1,1,8.731
//! ```
//!
//! Occasions are dense from 0, units run from 1 to the cluster size.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::panel::{ClusterId, ClusterObservation, PlanConfig, RotatingPanelSample};
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 4] = ["occasion", "cluster_id", "unit", "value"];

/// A parsed sample plus the non-fatal findings of validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub sample: RotatingPanelSample<f64>,
    pub warnings: Vec<String>,
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Ingested> {
    let file =
        std::fs::File::open(path.as_ref()).map_err(|err| Error::Io(format!("{}: {err}", path.as_ref().display())))?;
    read_csv(file)
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse { line: line as usize, message: message.into() }
}

/// Parses the CSV and infers the plan: `K + 1` from the occasions present,
/// `n` from occasion 0, `r` from the common cluster size and `m` as the
/// number of occasion-0 clusters absent from occasion 1.
///
/// Malformed rows, duplicated units, ragged clusters and structural
/// defects are errors. Deviations from the rotation geometry (unequal
/// occasion sizes, irregular overlaps) only produce warnings, since real
/// panels lose clusters.
pub fn read_csv(reader: impl Read) -> Result<Ingested> {
    let mut csv = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut records = csv.records();
    let header = match records.next() {
        Some(record) => record.map_err(|err| parse_error(1, err.to_string()))?,
        None => return Err(Error::EmptyInput),
    };
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(parse_error(1, format!("expected header {}", CSV_HEADER.join(","))));
    }

    let mut cells: BTreeMap<(usize, ClusterId), BTreeMap<usize, f64>> = BTreeMap::new();
    for record in records {
        let record = record.map_err(|err| {
            let line = err.position().map_or(0, |p| p.line());
            parse_error(line, err.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(parse_error(line, format!("expected 4 fields, found {}", record.len())));
        }
        let integer = |index: usize, name: &str| -> Result<u64> {
            record[index].parse::<u64>().map_err(|_| {
                parse_error(line, format!("{name} must be a nonnegative integer, found {:?}", &record[index]))
            })
        };
        let occasion = integer(0, "occasion")? as usize;
        let cluster_id =
            ClusterId::try_from(integer(1, "cluster_id")?).map_err(|_| parse_error(line, "cluster_id is too large"))?;
        let unit = integer(2, "unit")? as usize;
        if unit == 0 {
            return Err(parse_error(line, "units are numbered from 1"));
        }
        let value: f64 = record[3]
            .parse()
            .map_err(|_| parse_error(line, format!("value must be a decimal number, found {:?}", &record[3])))?;
        if !value.is_finite() {
            return Err(parse_error(line, format!("value must be finite, found {value}")));
        }
        if cells.entry((occasion, cluster_id)).or_default().insert(unit, value).is_some() {
            return Err(parse_error(
                line,
                format!("duplicate unit {unit} of cluster {cluster_id} on occasion {occasion}"),
            ));
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyInput);
    }
    build_sample(cells)
}

fn build_sample(cells: BTreeMap<(usize, ClusterId), BTreeMap<usize, f64>>) -> Result<Ingested> {
    let num_occasions = cells.keys().map(|&(k, _)| k).max().expect("nonempty") + 1;
    let mut membership: Vec<Vec<ClusterId>> = vec![Vec::new(); num_occasions];
    let mut cluster_size = None;
    let mut observations = Vec::with_capacity(cells.len());
    for ((occasion, cluster_id), units) in cells {
        let size = units.len();
        if units.keys().copied().ne(1..=size) {
            return Err(Error::InvalidConfig(format!(
                "cluster {cluster_id} on occasion {occasion} has units {:?}; expected 1..={size}",
                units.keys().collect::<Vec<_>>()
            )));
        }
        match cluster_size {
            None => cluster_size = Some(size),
            Some(r) if r != size => {
                return Err(Error::InvalidConfig(format!(
                    "inconsistent cluster size: cluster {cluster_id} on occasion {occasion} has {size} units, \
                     earlier clusters have {r}"
                )))
            }
            Some(_) => {}
        }
        membership[occasion].push(cluster_id);
        observations.push(ClusterObservation { occasion, cluster_id, values: units.into_values().collect() });
    }
    if let Some(empty) = membership.iter().position(Vec::is_empty) {
        return Err(Error::InvalidConfig(format!("occasion {empty} has no observations; occasions must be 0..=K")));
    }

    let n = membership[0].len();
    let overlap = if num_occasions > 1 {
        membership[0].iter().filter(|id| membership[1].binary_search(id).is_ok()).count()
    } else {
        0
    };
    let m = n - overlap;
    let plan = PlanConfig {
        num_occasions,
        clusters_per_occasion: n,
        replaced_per_occasion: m,
        cluster_size: cluster_size.expect("nonempty"),
        full_rotation: if m == 0 { 0 } else { n.div_ceil(m) },
    };
    let sample = RotatingPanelSample::from_parts(plan, membership, observations);

    let (structural, geometric): (Vec<_>, Vec<_>) = sample.validate().into_iter().partition(|v| v.is_structural());
    if !structural.is_empty() {
        return Err(Error::Validation(structural));
    }
    let mut warnings: Vec<String> = geometric.iter().map(ToString::to_string).collect();
    if num_occasions > 1 && overlap == 0 {
        warnings.push(
            "occasions 0 and 1 share no clusters: step I has nothing to swap and the permutation \
             test reduces to step I+"
                .to_string(),
        );
    }
    Ok(Ingested { sample, warnings })
}

/// Writes the sample in the format read by [`read_csv`], occasions in
/// order and clusters in membership order. Values use the shortest
/// representation that reads back to the same `f64`.
pub fn emit_csv(sample: &RotatingPanelSample<f64>, writer: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let io = |err: csv::Error| Error::Io(err.to_string());
    csv.write_record(CSV_HEADER).map_err(io)?;
    for k in 0..sample.num_occasions() {
        for obs in sample.clusters(k) {
            for (u, value) in obs.values.iter().enumerate() {
                csv.write_record([k.to_string(), obs.cluster_id.to_string(), (u + 1).to_string(), value.to_string()])
                    .map_err(io)?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_normal, NormalModelConfig};

    #[test]
    fn round_trip_is_exact() {
        let plan = PlanConfig::new(3, 6, 2, 4).unwrap();
        let cfg = NormalModelConfig { means: vec![8.0; 3], sigma1: 1.0, sigma2: 1.0, sigma3: 2.0, plan, seed: 42 };
        let sample = generate_normal(&cfg).unwrap();
        let mut buffer = Vec::new();
        emit_csv(&sample, &mut buffer).unwrap();
        let back = read_csv(buffer.as_slice()).unwrap();
        assert_eq!(back.sample, sample);
        assert!(back.warnings.is_empty());
    }

    #[test]
    fn malformed_row_names_its_line() {
        let text = "occasion,cluster_id,unit,value\n0,1,1,2.5\n0,1,2\n";
        let err = read_csv(text.as_bytes()).unwrap_err();
        assert_eq!(err, Error::Parse { line: 3, message: "expected 4 fields, found 3".into() });
    }

    #[test]
    fn header_and_duplicates_are_checked() {
        assert!(matches!(read_csv("a,b,c,d\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        let dup = "occasion,cluster_id,unit,value\n0,1,1,2.5\n0,1,1,3.5\n";
        assert!(matches!(read_csv(dup.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let ragged = "occasion,cluster_id,unit,value\n0,1,1,2.5\n0,1,2,3.5\n0,2,1,3.5\n1,1,1,1\n1,1,2,1\n";
        let err = read_csv(ragged.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("inconsistent cluster size"));
    }

    #[test]
    fn disjoint_occasions_are_accepted_with_a_warning() {
        let text = "occasion,cluster_id,unit,value\n0,1,1,2.5\n0,2,1,3.5\n1,3,1,1.0\n1,4,1,-1.0\n";
        let ingested = read_csv(text.as_bytes()).unwrap();
        assert!(ingested.warnings.iter().any(|w| w.contains("step I+")));
        // a negative value is fine until a log basis is requested
        assert_eq!(ingested.sample.values(1), vec![1.0, -1.0]);
    }
}
