//! CSV output for the attack and evaluation reports.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::evaluation::LinkabilityReport;

/// Writes `rows` with a header line taken from the field names.
pub fn write_rows<W: Write, S: Serialize>(w: W, rows: &[S]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    write_rows(std::fs::File::create(path)?, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SswlBin {
    pub bin: usize,
    pub low: f64,
    pub high: f64,
    pub mated: u64,
    pub nonmated: u64,
    pub local_linkability: f64,
}

pub fn sswl_bins(r: &LinkabilityReport) -> Vec<SswlBin> {
    (0..r.mated.bins())
        .map(|i| {
            let (low, high) = r.mated.edges(i);
            SswlBin {
                bin: i,
                low,
                high,
                mated: r.mated.counts[i],
                nonmated: r.nonmated.counts[i],
                local_linkability: r.local[i],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::TrialRecord;
    use crate::evaluation::sswl_from_scores;

    #[test]
    fn delta_theta_columns() {
        let rows = [
            TrialRecord {
                d: 16,
                beta: 0.5,
                trial: 0,
                reruns: 3,
                converged: true,
                delta_theta_rad: Some(0.25),
            },
            TrialRecord {
                d: 16,
                beta: 0.5,
                trial: 1,
                reruns: 10,
                converged: false,
                delta_theta_rad: None,
            },
        ];
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "d,beta,trial,reruns,converged,delta_theta_rad\n16,0.5,0,3,true,0.25\n16,0.5,1,10,false,\n"
        );
    }

    #[test]
    fn sswl_rows() {
        let r = sswl_from_scores(&[0.5, 0.5], &[-0.5, -0.5], 2).unwrap();
        let mut buf = Vec::new();
        write_rows(&mut buf, &sswl_bins(&r)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "bin,low,high,mated,nonmated,local_linkability\n0,-1.0,0.0,0,2,0.0\n1,0.0,1.0,2,0,1.0\n"
        );
    }
}
