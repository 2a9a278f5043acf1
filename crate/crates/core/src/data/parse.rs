use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{AgentTrack, AgentType, DataError, Point};

/// On-disk trajectory formats.
///
/// - `TsvEthUcy`: `frame_id<TAB>agent_id<TAB>x<TAB>y` per line, no header.
///   Every agent is a pedestrian.
/// - `LabeledCsv`: header `frame,agent_id,agent_type,x,y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryFormat {
    TsvEthUcy,
    LabeledCsv,
}

impl TrajectoryFormat {
    /// `.csv` is labeled CSV; anything else is treated as ETH/UCY TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TrajectoryFormat::LabeledCsv,
            _ => TrajectoryFormat::TsvEthUcy,
        }
    }
}

pub fn parse_trajectory_file(path: &Path, format: TrajectoryFormat) -> Result<Vec<AgentTrack>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trajectory_str(&text, format)
}

fn parse_number(field: &str, what: &str, line: usize) -> Result<f64, DataError> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::Malformed {
            line,
            message: format!("bad {what} {field:?}"),
        })
}

fn parse_integral(field: &str, what: &str, line: usize) -> Result<f64, DataError> {
    let v = parse_number(field, what, line)?;
    if v.fract() != 0.0 {
        return Err(DataError::Malformed {
            line,
            message: format!("{what} must be integral, got {field:?}"),
        });
    }
    Ok(v)
}

struct Row {
    frame: i64,
    agent: u64,
    agent_type: AgentType,
    point: Point,
}

pub fn parse_trajectory_str(text: &str, format: TrajectoryFormat) -> Result<Vec<AgentTrack>, DataError> {
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    if format == TrajectoryFormat::LabeledCsv {
        let (line, header) = lines.next().ok_or(DataError::Malformed {
            line: 1,
            message: "missing header".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["frame", "agent_id", "agent_type", "x", "y"] {
            return Err(DataError::Malformed {
                line,
                message: format!("expected header frame,agent_id,agent_type,x,y, got {header:?}"),
            });
        }
    }

    for (line, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let row = match format {
            TrajectoryFormat::TsvEthUcy => {
                let fields: Vec<&str> = raw.split('\t').collect();
                if fields.len() != 4 {
                    return Err(DataError::Malformed {
                        line,
                        message: format!("expected 4 tab-separated fields, got {}", fields.len()),
                    });
                }
                Row {
                    frame: parse_integral(fields[0], "frame_id", line)? as i64,
                    agent: parse_integral(fields[1], "agent_id", line)? as u64,
                    agent_type: AgentType::Pedestrian,
                    point: [parse_number(fields[2], "x", line)?, parse_number(fields[3], "y", line)?],
                }
            }
            TrajectoryFormat::LabeledCsv => {
                let fields: Vec<&str> = raw.split(',').collect();
                if fields.len() != 5 {
                    return Err(DataError::Malformed {
                        line,
                        message: format!("expected 5 comma-separated fields, got {}", fields.len()),
                    });
                }
                Row {
                    frame: parse_integral(fields[0], "frame", line)? as i64,
                    agent: parse_integral(fields[1], "agent_id", line)? as u64,
                    agent_type: fields[2].parse()?,
                    point: [parse_number(fields[3], "x", line)?, parse_number(fields[4], "y", line)?],
                }
            }
        };
        if !seen.insert((row.frame, row.agent)) {
            return Err(DataError::Duplicate {
                line,
                frame: row.frame,
                agent: row.agent,
            });
        }
        rows.push(row);
    }

    let mut by_agent: BTreeMap<u64, (AgentType, Vec<(i64, Point)>)> = BTreeMap::new();
    for r in rows {
        by_agent
            .entry(r.agent)
            .or_insert_with(|| (r.agent_type, Vec::new()))
            .1
            .push((r.frame, r.point));
    }
    Ok(by_agent
        .into_iter()
        .map(|(agent_id, (agent_type, mut obs))| {
            obs.sort_by_key(|&(f, _)| f);
            AgentTrack {
                agent_id,
                agent_type,
                frames: obs.iter().map(|o| o.0).collect(),
                positions: obs.iter().map(|o| o.1).collect(),
            }
        })
        .collect())
}

/// Loads every trajectory file in `dir` (sorted by name), returning
/// `(file stem, tracks)` pairs. Hidden files are skipped.
pub fn load_dir(dir: &Path) -> Result<Vec<(String, Vec<AgentTrack>)>, DataError> {
    let io = |source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            !p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with('.'))
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("data").to_string();
            parse_trajectory_file(&p, TrajectoryFormat::from_path(&p)).map(|t| (name, t))
        })
        .collect()
}

/// Renders tracks as labeled CSV, optionally with a trailing `sample_k`
/// column. Rows are ordered by sample, then frame, then agent.
pub fn write_labeled_csv(samples: &[(Option<usize>, &[AgentTrack])]) -> String {
    let with_k = samples.iter().any(|(k, _)| k.is_some());
    let mut out = String::from("frame,agent_id,agent_type,x,y");
    if with_k {
        out.push_str(",sample_k");
    }
    out.push('\n');
    for (k, tracks) in samples {
        let mut rows: Vec<(i64, u64, AgentType, Point)> = tracks
            .iter()
            .flat_map(|t| {
                t.frames
                    .iter()
                    .zip(&t.positions)
                    .map(move |(&f, &p)| (f, t.agent_id, t.agent_type, p))
            })
            .collect();
        rows.sort_by_key(|r| (r.0, r.1));
        for (f, id, ty, p) in rows {
            let _ = write!(out, "{f},{id},{ty},{},{}", p[0], p[1]);
            if let Some(k) = k {
                let _ = write!(out, ",{k}");
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_tsv() {
        let tracks = parse_trajectory_str("0\t1\t1.0\t2.0\n10\t1\t1.5\t2.5\n", TrajectoryFormat::TsvEthUcy).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 2);
        assert_eq!(tracks[0].agent_type, AgentType::Pedestrian);
        assert_eq!(tracks[0].frames, vec![0, 10]);
    }

    #[test]
    fn eth_style_float_ids() {
        let tracks = parse_trajectory_str("780.0\t1.0\t8.46\t3.59\n", TrajectoryFormat::TsvEthUcy).unwrap();
        assert_eq!(tracks[0].agent_id, 1);
        assert_eq!(tracks[0].frames, vec![780]);
    }

    #[test]
    fn unsorted_frames_are_sorted() {
        let text = "20\t1\t2\t0\n0\t1\t0\t0\n10\t1\t1\t0\n";
        let t = &parse_trajectory_str(text, TrajectoryFormat::TsvEthUcy).unwrap()[0];
        assert_eq!(t.frames, vec![0, 10, 20]);
        assert_eq!(t.positions, vec![[0., 0.], [1., 0.], [2., 0.]]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_trajectory_str("0\t1\t0\t0\n10\t1\tfoo\t0\n", TrajectoryFormat::TsvEthUcy).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_observation_rejected() {
        let err = parse_trajectory_str("0\t1\t0\t0\n0\t1\t1\t1\n", TrajectoryFormat::TsvEthUcy).unwrap_err();
        assert!(matches!(
            err,
            DataError::Duplicate {
                line: 2,
                frame: 0,
                agent: 1
            }
        ));
    }

    #[test]
    fn labeled_csv_with_unknown_type() {
        let text = "frame,agent_id,agent_type,x,y\n0,1,pedestrian,0,0\n0,2,tram,1,1\n";
        let err = parse_trajectory_str(text, TrajectoryFormat::LabeledCsv)
            .unwrap_err()
            .to_string();
        assert!(err.contains("tram") && err.contains("vehicle"), "{err}");
    }

    #[test]
    fn labeled_csv_roundtrip() {
        let text = "frame,agent_id,agent_type,x,y\n0,1,vehicle,0.5,1\n1,1,vehicle,1.5,1\n0,2,other,3,4\n";
        let tracks = parse_trajectory_str(text, TrajectoryFormat::LabeledCsv).unwrap();
        assert_eq!(tracks[0].agent_type, AgentType::Vehicle);
        let rendered = write_labeled_csv(&[(None, &tracks)]);
        let again = parse_trajectory_str(&rendered, TrajectoryFormat::LabeledCsv).unwrap();
        assert_eq!(tracks, again);
    }

    #[test]
    fn sample_column_is_appended() {
        let t = AgentTrack {
            agent_id: 3,
            agent_type: AgentType::Pedestrian,
            frames: vec![8],
            positions: vec![[1.0, 2.0]],
        };
        let out = write_labeled_csv(&[(Some(0), std::slice::from_ref(&t)), (Some(1), std::slice::from_ref(&t))]);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "frame,agent_id,agent_type,x,y,sample_k");
        assert_eq!(lines[1], "8,3,pedestrian,1,2,0");
        assert_eq!(lines[2], "8,3,pedestrian,1,2,1");
    }
}
