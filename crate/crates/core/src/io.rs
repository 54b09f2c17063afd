//! CSV and JSON serialization of sample sets and run manifests.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::PriorWeight;
use crate::sampler::{Draw, SampleSet, Scenario};

/// Serde adapter writing a matrix as a list of rows.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
    }
}

/// [`rows`] for optional matrices; `None` becomes `null`.
pub mod opt_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(super::rows::to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Option::<Vec<Vec<f64>>>::deserialize(d)?
            .map(|r| super::rows::from_rows(&r).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Shortest decimal representation that round-trips; 17 significant digits.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Writes `draw, scenario, theta1_1.., theta2_1.., converged`.
pub fn write_samples_csv<W: Write>(set: &SampleSet, out: W) -> Result<()> {
    let (d1, d2) = set.dims();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["draw".to_string(), "scenario".to_string()];
    header.extend((1..=d1).map(|i| format!("theta1_{i}")));
    header.extend((1..=d2).map(|i| format!("theta2_{i}")));
    header.push("converged".into());
    w.write_record(&header)?;
    for (k, d) in set.draws.iter().enumerate() {
        let mut rec = vec![k.to_string(), set.scenario.to_string()];
        rec.extend(d.theta1.iter().chain(&d.theta2).map(|v| format_float(*v)));
        rec.push(d.converged.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_samples_csv`]. Seed, prior weights and
/// model id are not stored in the CSV and come back as defaults.
pub fn read_samples_csv<R: Read>(input: R) -> Result<SampleSet> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let d1 = headers.iter().filter(|h| h.starts_with("theta1_")).count();
    let d2 = headers.iter().filter(|h| h.starts_with("theta2_")).count();
    if headers.len() != d1 + d2 + 3 || d1 == 0 || d2 == 0 {
        return Err(Error::Data("unexpected samples.csv header".into()));
    }
    let mut draws = Vec::new();
    let mut scenario = None;
    for rec in r.records() {
        let rec = rec?;
        let s = Scenario::parse(&rec[1])
            .ok_or_else(|| Error::Data(format!("unknown scenario `{}`", &rec[1])))?;
        scenario.get_or_insert(s);
        let vals = (2..2 + d1 + d2)
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("cannot parse `{}`", &rec[i])))
            })
            .collect::<Result<Vec<_>>>()?;
        let converged = &rec[2 + d1 + d2] == "true";
        draws.push(Draw::new(vals[..d1].to_vec(), vals[d1..].to_vec(), converged));
    }
    let scenario = scenario.ok_or_else(|| Error::Data("samples.csv has no rows".into()))?;
    Ok(SampleSet::new(draws, scenario, 0, ""))
}

/// Hex SHA-256 of a byte string, used to fingerprint input data.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    #[serde(rename = "N")]
    pub n_draws: usize,
    pub w0: PriorWeight,
    pub v0: PriorWeight,
    pub model_id: String,
    pub scenario: Option<Scenario>,
    pub data_sha256: String,
    pub timestamp: u64,
    #[serde(default)]
    pub settings: serde_json::Value,
}

impl RunManifest {
    pub fn for_samples(set: &SampleSet, data_sha256: String, settings: serde_json::Value) -> Self {
        Self {
            seed: set.seed,
            n_draws: set.len(),
            w0: set.w0.clone(),
            v0: set.v0.clone(),
            model_id: set.model_id.clone(),
            scenario: Some(set.scenario),
            data_sha256,
            timestamp: unix_time(),
            settings,
        }
    }
}

pub fn unix_time() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// JSON for a matrix, as nested rows.
pub fn matrix_json(m: &DMatrix<f64>) -> serde_json::Value {
    serde_json::json!(rows::to_rows(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_round_trip_exactly() {
        let draws = vec![
            Draw::new(vec![0.1, -2.5e-7], vec![1.0 / 3.0], true),
            Draw::new(vec![f64::NAN, 3.0], vec![f64::NAN], false),
        ];
        let set = SampleSet::new(draws, Scenario::S2, 5, "toy");
        let mut buf = Vec::new();
        write_samples_csv(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("draw,scenario,theta1_1,theta1_2,theta2_1,converged\n"));
        let back = read_samples_csv(&buf[..]).unwrap();
        assert_eq!(back.draws[0], set.draws[0]);
        assert!(!back.draws[1].converged && back.draws[1].theta1[0].is_nan());
        assert_eq!(back.scenario, Scenario::S2);
    }

    #[test]
    fn matrix_rows_serde() {
        #[derive(Serialize, Deserialize)]
        struct W {
            #[serde(with = "rows")]
            m: DMatrix<f64>,
        }
        let w = W {
            m: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        };
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, r#"{"m":[[1.0,2.0,3.0],[4.0,5.0,6.0]]}"#);
        let back: W = serde_json::from_str(&s).unwrap();
        assert_eq!(back.m, w.m);
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            digest(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
