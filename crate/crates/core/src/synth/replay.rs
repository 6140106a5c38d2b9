//! JSON Lines recording format: one `{"t": seconds, "v": [af3, t7, pz, t8, af4]}`
//! object per line, plus a `{"win", "com", "fac"}` ground-truth sidecar.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{SynthError, WindowLabel};
use crate::signal::EegFrame;
use crate::Scalar;

fn read_lines<R: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, R)>, SynthError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| SynthError::Parse { line: i + 1, message: e.to_string() })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

fn write_lines<R: Serialize>(path: &Path, records: impl IntoIterator<Item = R>) -> Result<(), SynthError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a recording, rejecting non-finite values and non-increasing timestamps.
pub fn load_replay<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<EegFrame<T>>, SynthError> {
    let mut frames: Vec<EegFrame<T>> = Vec::new();
    for (line, frame) in read_lines::<EegFrame<T>>(path.as_ref())? {
        if !frame.is_finite() {
            return Err(SynthError::Parse { line, message: "non-finite or negative value".into() });
        }
        if let Some(prev) = frames.last() {
            if frame.timestamp <= prev.timestamp {
                return Err(SynthError::NonMonotonic { line, timestamp: frame.timestamp });
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn save_replay<T: Scalar>(path: impl AsRef<Path>, frames: &[EegFrame<T>]) -> Result<(), SynthError> {
    write_lines(path.as_ref(), frames)
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<WindowLabel>, SynthError> {
    Ok(read_lines(path.as_ref())?.into_iter().map(|(_, l)| l).collect())
}

pub fn save_ground_truth(path: impl AsRef<Path>, labels: &[WindowLabel]) -> Result<(), SynthError> {
    write_lines(path.as_ref(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SampleRate;
    use crate::synth::{generate, Episode, NoiseModel, ScenarioScript, SignatureTables};
    use crate::vocab::MentalCommand;

    #[test]
    fn empty_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_replay::<f64>(&p).unwrap().is_empty());
    }

    #[test]
    fn single_frame() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.jsonl");
        std::fs::write(&p, "{\"t\":0.0,\"v\":[1,2,3,4,5]}\n").unwrap();
        let frames = load_replay::<f64>(&p).unwrap();
        assert_eq!(frames, vec![EegFrame::new(0.0, [1.0, 2.0, 3.0, 4.0, 5.0])]);
    }

    #[test]
    fn malformed_line_names_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(&p, "{\"t\":0.0,\"v\":[1,2,3,4,5]}\n{\"t\":0.1,\"v\":[1,2]}\n").unwrap();
        assert!(matches!(load_replay::<f64>(&p), Err(SynthError::Parse { line: 2, .. })));
        std::fs::write(&p, "{\"t\":0.5,\"v\":[1,2,3,4,5]}\n{\"t\":0.5,\"v\":[1,2,3,4,5]}\n").unwrap();
        assert!(matches!(load_replay::<f64>(&p), Err(SynthError::NonMonotonic { line: 2, .. })));
    }

    #[test]
    fn generated_stream_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let script = ScenarioScript::new(5.0, SampleRate::Hz128).with(Episode::mental(1.0, 2.0, MentalCommand::Left));
        let (frames, labels) = generate::<f64>(&script, &SignatureTables::default(), &NoiseModel::default()).unwrap();
        let p = dir.path().join("rec.jsonl");
        save_replay(&p, &frames).unwrap();
        assert_eq!(load_replay::<f64>(&p).unwrap(), frames);
        let g = dir.path().join("rec.truth.jsonl");
        save_ground_truth(&g, &labels).unwrap();
        assert_eq!(load_ground_truth(&g).unwrap(), labels);
        let first = std::fs::read_to_string(&g).unwrap();
        assert!(first.starts_with("{\"win\":0,\"com\":\"left\",\"fac\":\"neutral\"}"));
    }
}
