//! Per-episode CSV files.

use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use legible_core::experiment::{Condition, Episode, EpisodeRecord};

pub const HEADER: [&str; 7] = [
    "scenario_id",
    "grid",
    "condition",
    "success",
    "total_steps",
    "inference_steps",
    "never_inferred",
];

pub fn write_records<W: Write>(out: W, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in records {
        let inference: Vec<String> = r.episode.inference_steps.iter().map(u32::to_string).collect();
        w.write_record([
            r.scenario_id.to_string(),
            r.grid.to_string(),
            r.condition.name().to_string(),
            r.episode.success.to_string(),
            r.episode.total_steps.to_string(),
            inference.join(";"),
            r.never_inferred_count().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a file written by [`write_records`]. Only the CSV columns survive:
/// segment lengths and the event log come back empty, and the never-inferred
/// flags are rebuilt from their count.
pub fn read_records<R: Read>(input: R) -> Result<Vec<EpisodeRecord>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers().context("reading header")?.clone();
    if header.iter().ne(HEADER) {
        bail!("line 1: expected header {}", HEADER.join(","));
    }
    let mut out = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let line = i + 2;
        let row = row.with_context(|| format!("line {line}: malformed row"))?;
        out.push(parse_row(&row).with_context(|| format!("line {line}"))?);
    }
    Ok(out)
}

fn parse_row(row: &csv::StringRecord) -> Result<EpisodeRecord> {
    if row.len() != HEADER.len() {
        bail!("expected {} fields, found {}", HEADER.len(), row.len());
    }
    let field = |i: usize| &row[i];
    let condition = Condition::parse(field(2)).with_context(|| format!("unknown condition {:?}", field(2)))?;
    let inference_steps: Vec<u32> = if field(5).is_empty() {
        Vec::new()
    } else {
        field(5)
            .split(';')
            .map(|s| s.parse().with_context(|| format!("bad inference step {s:?}")))
            .collect::<Result<_>>()?
    };
    let never: usize = field(6).parse().context("bad never_inferred count")?;
    if never > inference_steps.len() {
        bail!("never_inferred exceeds the number of objectives");
    }
    let never_inferred = (0..inference_steps.len()).map(|i| i < never).collect();
    Ok(EpisodeRecord {
        scenario_id: field(0).parse().context("bad scenario_id")?,
        grid: field(1).parse().context("bad grid")?,
        condition,
        episode: Episode {
            success: field(3).parse().context("bad success flag")?,
            total_steps: field(4).parse().context("bad total_steps")?,
            inference_steps,
            never_inferred,
            segment_steps: Vec::new(),
            events: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: u32, cond: Condition, inf: Vec<u32>) -> EpisodeRecord {
        let n = inf.len();
        EpisodeRecord {
            scenario_id: id,
            grid: 5,
            condition: cond,
            episode: Episode {
                success: true,
                total_steps: 40,
                never_inferred: (0..n).map(|i| i == 0).collect(),
                inference_steps: inf,
                segment_steps: Vec::new(),
                events: Vec::new(),
            },
        }
    }

    #[test]
    fn writes_expected_bytes_and_reads_back() {
        let recs = vec![record(0, Condition::Optimal, vec![3, 1]), record(0, Condition::Legible, vec![])];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "scenario_id,grid,condition,success,total_steps,inference_steps,never_inferred\n\
             0,5,optimal,true,40,3;1,1\n\
             0,5,legible,true,40,,0\n"
        );
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn bad_rows_name_their_line() {
        let text = "scenario_id,grid,condition,success,total_steps,inference_steps,never_inferred\n0,5,optimal,true,40,3,0\n1,5,nobody,true,4,,0\n";
        let err = format!("{:#}", read_records(text.as_bytes()).unwrap_err());
        assert!(err.contains("line 3"), "{err}");
    }
}
