//! CSV persistence of send, receive and pseudonym logs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use edgebench_core::workload::{ReceivedRecord, SentRecord};

pub fn sent_path(dir: &Path, producer_id: u32) -> PathBuf {
    dir.join(format!("sent_{producer_id}.csv"))
}

pub fn received_path(dir: &Path, consumer_id: u32) -> PathBuf {
    dir.join(format!("received_{consumer_id}.csv"))
}

pub const PSEUDONYMS_FILE: &str = "pseudonyms.csv";

fn write_rows<T: serde::Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn write_sent(path: &Path, records: &[SentRecord]) -> anyhow::Result<()> {
    write_rows(path, records)
}

pub fn read_sent(path: &Path) -> anyhow::Result<Vec<SentRecord>> {
    read_rows(path)
}

pub fn write_received(path: &Path, records: &[ReceivedRecord]) -> anyhow::Result<()> {
    write_rows(path, records)
}

pub fn read_received(path: &Path) -> anyhow::Result<Vec<ReceivedRecord>> {
    read_rows(path)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct PseudonymRow {
    producer_id: u32,
    pseudonym: u32,
}

pub fn write_pseudonyms(path: &Path, entries: &[(u32, u32)]) -> anyhow::Result<()> {
    write_rows(
        path,
        entries.iter().map(|&(producer_id, pseudonym)| PseudonymRow {
            producer_id,
            pseudonym,
        }),
    )
}

/// Pseudonym to original producer id.
pub fn read_inverse_pseudonyms(path: &Path) -> anyhow::Result<BTreeMap<u32, u32>> {
    Ok(read_rows::<PseudonymRow>(path)?
        .into_iter()
        .map(|r| (r.pseudonym, r.producer_id))
        .collect())
}

/// Every `prefix_<n>.csv` in `dir`, sorted by file name.
pub fn list_logs(dir: &Path, prefix: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix) && n.ends_with(".csv"))
        })
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_headers() {
        let dir = tempfile::tempdir().unwrap();
        let sent = vec![SentRecord {
            producer_id: 3,
            sequence: 1,
            origin_time_ms: 1_700_000_000_500,
        }];
        let p = sent_path(dir.path(), 3);
        write_sent(&p, &sent).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "producer_id,sequence,origin_time_ms\n3,1,1700000000500\n"
        );
        assert_eq!(read_sent(&p).unwrap(), sent);

        let recv = vec![ReceivedRecord {
            producer_id: 9,
            sequence: 1,
            origin_time_ms: 10,
            receive_time_ms: 50,
        }];
        let p = received_path(dir.path(), 1);
        write_received(&p, &recv).unwrap();
        assert!(fs::read_to_string(&p)
            .unwrap()
            .starts_with("producer_id,sequence,origin_time_ms,receive_time_ms\n"));
        assert_eq!(read_received(&p).unwrap(), recv);

        let p = dir.path().join(PSEUDONYMS_FILE);
        write_pseudonyms(&p, &[(1, 77), (2, 78)]).unwrap();
        let inv = read_inverse_pseudonyms(&p).unwrap();
        assert_eq!(inv[&77], 1);
        assert_eq!(list_logs(dir.path(), "sent_").unwrap().len(), 1);
    }
}
