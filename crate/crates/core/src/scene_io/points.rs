use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::camera::CameraModel;
use crate::error::{Error, Result};

/// One sparse scene point in the central view's screen space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePoint {
    /// Projected position in pixels.
    pub x: f64,
    pub y: f64,
    /// Depth label: camera depth (projective) or disparity (light field).
    pub z: f64,
    /// Log-weight; the data weight is `exp(-log_weight)`.
    pub log_weight: f64,
}

impl ScenePoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        ScenePoint {
            x,
            y,
            z,
            log_weight: 0.0,
        }
    }

    pub fn weight(&self) -> f64 {
        (-self.log_weight).exp()
    }

    /// Whether the point's footprint can touch a `width`×`height` grid with
    /// kernel half-extent `half`.
    pub fn is_active(&self, width: usize, height: usize, half: usize) -> bool {
        let k = half as f64;
        self.x >= -k && self.x <= width as f64 + k && self.y >= -k && self.y <= height as f64 + k
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    points: Vec<ScenePoint>,
}

impl PointSet {
    pub fn new(points: Vec<ScenePoint>) -> Self {
        PointSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn as_slice(&self) -> &[ScenePoint] {
        &self.points
    }

    pub fn as_mut_slice(&mut self) -> &mut [ScenePoint] {
        &mut self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ScenePoint> {
        self.points.iter()
    }

    pub fn push(&mut self, p: ScenePoint) {
        self.points.push(p);
    }

    /// Per-point active flag for a grid; inactive points stay in the set but
    /// are skipped by the renderer.
    pub fn active_mask(&self, width: usize, height: usize, half: usize) -> Vec<bool> {
        self.points
            .iter()
            .map(|p| p.is_active(width, height, half))
            .collect()
    }
}

impl std::ops::Index<usize> for PointSet {
    type Output = ScenePoint;

    fn index(&self, i: usize) -> &ScenePoint {
        &self.points[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    World,
    Screen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRecord {
    /// Zero-based record index (header excluded).
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedPoints {
    pub points: PointSet,
    pub kind: RecordKind,
    pub rejected: Vec<RejectedRecord>,
}

/// Reads a point file. World records need `central` to project them.
pub fn load_points(path: &Path, central: Option<&CameraModel>) -> Result<LoadedPoints> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_points(file, path, central)
}

pub fn parse_points<R: Read>(
    reader: R,
    path: &Path,
    central: Option<&CameraModel>,
) -> Result<LoadedPoints> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);

    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(Error::Points(format!("{}: no points", path.display()))),
    };
    let kind = match header.get(0).map(str::to_ascii_lowercase).as_deref() {
        Some("screen") => RecordKind::Screen,
        Some("world") => RecordKind::World,
        other => {
            return Err(parse_err(
                1,
                format!("header must declare `world` or `screen`, got {other:?}"),
            ))
        }
    };
    if kind == RecordKind::World {
        match central {
            None => {
                return Err(Error::Points(
                    "world records need a central camera to project through".into(),
                ))
            }
            Some(cam) if cam.is_light_field() => {
                return Err(Error::Points(
                    "world records need a projective central camera".into(),
                ))
            }
            _ => {}
        }
    }

    let mut points = PointSet::default();
    let mut rejected = Vec::new();
    for (index, rec) in records.enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let want = match kind {
            RecordKind::Screen => 3..=4,
            RecordKind::World => 3..=3,
        };
        if !want.contains(&rec.len()) {
            return Err(parse_err(
                line,
                format!("expected {:?} fields, found {}", want, rec.len()),
            ));
        }
        let mut vals = [0.0f64; 4];
        for (i, field) in rec.iter().enumerate() {
            vals[i] = field
                .parse()
                .map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
        }
        let used = &vals[..rec.len()];
        if used.iter().any(|v| !v.is_finite()) {
            rejected.push(RejectedRecord {
                index,
                reason: "non-finite coordinate".into(),
            });
            continue;
        }
        match kind {
            RecordKind::Screen => points.push(ScenePoint {
                x: vals[0],
                y: vals[1],
                z: vals[2],
                log_weight: vals[3],
            }),
            RecordKind::World => {
                let cam = central.expect("checked above");
                match cam.project_world([vals[0], vals[1], vals[2]]) {
                    Some((x, y, z)) => points.push(ScenePoint::new(x, y, z)),
                    None => rejected.push(RejectedRecord {
                        index,
                        reason: "point is not in front of the central camera".into(),
                    }),
                }
            }
        }
    }

    for r in &rejected {
        log::warn!("{}: rejected record {}: {}", path.display(), r.index, r.reason);
    }
    if points.is_empty() {
        return Err(Error::Points(format!("{}: no valid points", path.display())));
    }
    Ok(LoadedPoints {
        points,
        kind,
        rejected,
    })
}

/// Writes screen records `x,y,z,log_weight`; values round-trip exactly.
pub fn write_points(points: &PointSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "screen").map_err(io)?;
    for p in points.iter() {
        writeln!(out, "{:?},{:?},{:?},{:?}", p.x, p.y, p.z, p.log_weight).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::camera::{IDENTITY_POSE, IDENTITY_K};

    fn parse(text: &str, cam: Option<&CameraModel>) -> Result<LoadedPoints> {
        parse_points(text.as_bytes(), Path::new("test.csv"), cam)
    }

    #[test]
    fn screen_records_are_ingested_in_order_with_zero_log_weight() {
        let loaded = parse("screen\n10.0,12.0,2.0\n30.5,40.25,5.0\n100.0,7.0,1.5\n", None).unwrap();
        let pts = loaded.points;
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[1], ScenePoint::new(30.5, 40.25, 5.0));
        assert!(pts.iter().all(|p| p.log_weight == 0.0));
        assert!(pts.active_mask(128, 128, 3).iter().all(|&a| a));
    }

    #[test]
    fn world_record_at_camera_origin_is_rejected_and_reported() {
        let cam = CameraModel::projective(IDENTITY_K, IDENTITY_POSE).unwrap();
        let loaded = parse("world\n0,0,0\n0.5,0.25,2\n", Some(&cam)).unwrap();
        assert_eq!(loaded.points.len(), 1);
        assert_eq!(loaded.rejected.len(), 1);
        assert_eq!(loaded.rejected[0].index, 0);
        assert_eq!(loaded.points[0], ScenePoint::new(0.25, 0.125, 2.0));
    }

    #[test]
    fn non_finite_records_are_rejected_with_index() {
        let loaded = parse("screen\n1,2,3\nNaN,2,3\n4,5,inf\n7,8,9\n", None).unwrap();
        assert_eq!(loaded.points.len(), 2);
        let idx: Vec<_> = loaded.rejected.iter().map(|r| r.index).collect();
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(parse("screen\n", None).is_err());
        assert!(parse("", None).is_err());
        assert!(parse("screen\nnan,1,1\n", None).is_err());
    }

    #[test]
    fn bad_header_is_an_error() {
        assert!(matches!(parse("x,y,z\n1,2,3\n", None), Err(Error::Parse { .. })));
    }

    #[test]
    fn points_outside_the_padded_grid_are_inactive() {
        let pts = PointSet::new(vec![
            ScenePoint::new(-3.0, 5.0, 1.0),
            ScenePoint::new(-3.01, 5.0, 1.0),
            ScenePoint::new(5.0, 19.5, 1.0),
        ]);
        assert_eq!(pts.active_mask(16, 16, 3), vec![true, false, false]);
    }

    #[test]
    fn large_file_loads_without_truncation() {
        let mut text = String::from("screen\n");
        for i in 0..50_000 {
            text.push_str(&format!("{},{},{}\n", i % 512, i / 512, 1.0 + (i % 7) as f64));
        }
        let loaded = parse(&text, None).unwrap();
        assert_eq!(loaded.points.len(), 50_000);
        assert_eq!(loaded.points[49_999].x, (49_999 % 512) as f64);
    }

    #[test]
    fn written_points_read_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let pts = PointSet::new(vec![
            ScenePoint {
                x: 0.1,
                y: 1.0 / 3.0,
                z: 2.5e-3,
                log_weight: -0.7,
            },
            ScenePoint::new(4.0, 5.0, 6.0),
        ]);
        write_points(&pts, &path).unwrap();
        let back = load_points(&path, None).unwrap().points;
        assert_eq!(back, pts);
    }
}
