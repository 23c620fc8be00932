//! Point clouds, the ASCII PCD subset we read and write, and voxel-grid
//! downsampling.

use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point3;

/// 8-bit color carried per point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Rgb {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Rgb {
    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Rgb { r, g, b }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("color count {colors} does not match point count {points}")]
    ColorLengthMismatch { points: usize, colors: usize },
    #[error("point {index} is not finite")]
    NonFinitePoint { index: usize },
}

/// Ordered points with optional parallel colors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
    colors: Option<Vec<Rgb>>,
    frame_id: String,
}

pub const DEFAULT_FRAME: &str = "world";

impl Default for PointCloud {
    fn default() -> Self {
        PointCloud::new(Vec::new())
    }
}

impl PointCloud {
    /// Uncolored cloud. Panics on non-finite points; use [`PointCloud::try_new`]
    /// for untrusted data.
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud::try_new(points, None).expect("invalid point cloud")
    }

    pub fn with_colors(points: Vec<Point3>, colors: Vec<Rgb>) -> Result<Self, CloudError> {
        PointCloud::try_new(points, Some(colors))
    }

    pub fn try_new(points: Vec<Point3>, colors: Option<Vec<Rgb>>) -> Result<Self, CloudError> {
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(CloudError::ColorLengthMismatch {
                    points: points.len(),
                    colors: c.len(),
                });
            }
        }
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(CloudError::NonFinitePoint { index });
        }
        Ok(PointCloud {
            points,
            colors,
            frame_id: DEFAULT_FRAME.to_string(),
        })
    }

    pub fn with_frame(mut self, frame_id: impl Into<String>) -> Self {
        self.frame_id = frame_id.into();
        self
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Rgb]> {
        self.colors.as_deref()
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// New cloud holding the given indices, in the given order. Colors and
    /// frame are carried over.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            frame_id: self.frame_id.clone(),
        }
    }

    /// Concatenates clouds. Colors survive only if every part has them.
    pub fn concat(parts: &[PointCloud]) -> PointCloud {
        let points = parts.iter().flat_map(|c| c.points.iter().copied()).collect();
        let colors = if parts.iter().all(|c| c.colors.is_some()) {
            Some(
                parts
                    .iter()
                    .flat_map(|c| c.colors.as_ref().unwrap().iter().copied())
                    .collect(),
            )
        } else {
            None
        };
        PointCloud {
            points,
            colors,
            frame_id: parts
                .first()
                .map(|c| c.frame_id.clone())
                .unwrap_or_else(|| DEFAULT_FRAME.to_string()),
        }
    }

    pub fn centroid(&self) -> Option<Point3> {
        Point3::centroid(&self.points)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PcdError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("header declares {declared} points but body has {found} rows")]
    CountMismatch { declared: usize, found: usize },
    #[error("non-finite value on line {line}")]
    NonFiniteValue { line: usize },
    #[error("invalid value {token:?} on line {line}")]
    InvalidValue { line: usize, token: String },
    #[error("row on line {line} has {found} values, expected {expected}")]
    RowWidth {
        line: usize,
        expected: usize,
        found: usize,
    },
}

const HEADER_ORDER: [&str; 10] = [
    "VERSION",
    "FIELDS",
    "SIZE",
    "TYPE",
    "COUNT",
    "WIDTH",
    "HEIGHT",
    "VIEWPOINT",
    "POINTS",
    "DATA",
];

const FRAME_COMMENT: &str = "# frame_id ";

/// Parses an ASCII PCD v0.7 document.
///
/// `x y z` are required, `r g b` (integers, all three) are optional, and any
/// other field is skipped. Header keywords must appear in the canonical
/// order; `FIELDS`, `POINTS` and `DATA ascii` are mandatory.
pub fn parse_pcd(text: &str) -> Result<PointCloud, PcdError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut seen: Vec<usize> = Vec::new();
    let mut fields: Option<Vec<String>> = None;
    let mut counts: Option<Vec<usize>> = None;
    let mut declared: Option<usize> = None;
    let mut frame_id = DEFAULT_FRAME.to_string();
    let mut data_found = false;

    for (_, raw) in lines.by_ref() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(frame) = raw.strip_prefix(FRAME_COMMENT) {
            frame_id = frame.trim().to_string();
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next().unwrap_or_default();
        let rest: Vec<&str> = tokens.collect();
        let rank = HEADER_ORDER
            .iter()
            .position(|k| *k == keyword)
            .ok_or_else(|| PcdError::MalformedHeader(format!("unexpected line {line:?}")))?;
        if seen.last().is_some_and(|&last| rank <= last) {
            return Err(PcdError::MalformedHeader(format!(
                "{keyword} out of order or repeated"
            )));
        }
        seen.push(rank);
        match keyword {
            "FIELDS" => {
                if rest.is_empty() {
                    return Err(PcdError::MalformedHeader("empty FIELDS".into()));
                }
                fields = Some(rest.iter().map(|s| s.to_string()).collect());
            }
            "COUNT" => {
                let parsed = rest
                    .iter()
                    .map(|s| s.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| PcdError::MalformedHeader("bad COUNT".into()))?;
                counts = Some(parsed);
            }
            "POINTS" => {
                let n = rest
                    .first()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| PcdError::MalformedHeader("bad POINTS".into()))?;
                declared = Some(n);
            }
            "DATA" => {
                if rest.first() != Some(&"ascii") {
                    return Err(PcdError::MalformedHeader(
                        "only DATA ascii is supported".into(),
                    ));
                }
                data_found = true;
                break;
            }
            _ => {}
        }
    }

    let fields = fields.ok_or_else(|| PcdError::MalformedHeader("missing FIELDS".into()))?;
    let declared = declared.ok_or_else(|| PcdError::MalformedHeader("missing POINTS".into()))?;
    if !data_found {
        return Err(PcdError::MalformedHeader("missing DATA".into()));
    }
    let counts = counts.unwrap_or_else(|| vec![1; fields.len()]);
    if counts.len() != fields.len() {
        return Err(PcdError::MalformedHeader(
            "COUNT and FIELDS differ in length".into(),
        ));
    }

    // column offset of each field in a body row
    let mut offsets = Vec::with_capacity(fields.len());
    let mut width = 0;
    for &c in &counts {
        offsets.push(width);
        width += c;
    }
    let column = |name: &str| -> Option<usize> {
        fields
            .iter()
            .position(|f| f == name)
            .filter(|&i| counts[i] == 1)
            .map(|i| offsets[i])
    };
    let (cx, cy, cz) = match (column("x"), column("y"), column("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => {
            return Err(PcdError::MalformedHeader(
                "FIELDS must contain x y z".into(),
            ))
        }
    };
    let color_cols = match (column("r"), column("g"), column("b")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };

    let mut points = Vec::with_capacity(declared);
    let mut colors = color_cols.map(|_| Vec::with_capacity(declared));
    let mut found = 0;
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        found += 1;
        if found > declared {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != width {
            return Err(PcdError::RowWidth {
                line: lineno,
                expected: width,
                found: tokens.len(),
            });
        }
        let coord = |col: usize| -> Result<f64, PcdError> {
            let v: f64 = tokens[col].parse().map_err(|_| PcdError::InvalidValue {
                line: lineno,
                token: tokens[col].to_string(),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(PcdError::NonFiniteValue { line: lineno })
            }
        };
        points.push(Point3::new(coord(cx)?, coord(cy)?, coord(cz)?));
        if let (Some((r, g, b)), Some(out)) = (color_cols, colors.as_mut()) {
            let channel = |col: usize| -> Result<u8, PcdError> {
                tokens[col].parse::<u8>().map_err(|_| PcdError::InvalidValue {
                    line: lineno,
                    token: tokens[col].to_string(),
                })
            };
            out.push(Rgb::new(channel(r)?, channel(g)?, channel(b)?));
        }
    }
    if found != declared {
        return Err(PcdError::CountMismatch { declared, found });
    }
    Ok(PointCloud {
        points,
        colors,
        frame_id,
    })
}

/// Writes the cloud as ASCII PCD v0.7.
///
/// Coordinates use the shortest decimal form that parses back to the same
/// `f64`, so `parse_pcd(&serialize_pcd(c)) == c` holds exactly.
pub fn serialize_pcd(cloud: &PointCloud) -> String {
    let n = cloud.len();
    let colored = cloud.colors.is_some();
    let mut out = String::with_capacity(64 + n * 48);
    out.push_str("# .PCD v0.7 - Point Cloud Data file format\n");
    let _ = writeln!(out, "{FRAME_COMMENT}{}", cloud.frame_id);
    out.push_str("VERSION 0.7\n");
    if colored {
        out.push_str("FIELDS x y z r g b\nSIZE 8 8 8 1 1 1\nTYPE F F F U U U\nCOUNT 1 1 1 1 1 1\n");
    } else {
        out.push_str("FIELDS x y z\nSIZE 8 8 8\nTYPE F F F\nCOUNT 1 1 1\n");
    }
    let _ = writeln!(out, "WIDTH {n}");
    out.push_str("HEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\n");
    let _ = writeln!(out, "POINTS {n}");
    out.push_str("DATA ascii\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(c) = &cloud.colors {
            let _ = write!(out, " {} {} {}", c[i].r, c[i].g, c[i].b);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Error)]
pub enum PcdFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: String, source: PcdError },
}

pub fn read_pcd_file(path: impl AsRef<Path>) -> Result<PointCloud, PcdFileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PcdFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pcd(&text).map_err(|source| PcdFileError::Parse {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_pcd_file(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<(), PcdFileError> {
    let path = path.as_ref();
    std::fs::write(path, serialize_pcd(cloud)).map_err(|source| PcdFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Error, PartialEq)]
#[error("voxel leaf size must be positive and finite, got {0}")]
pub struct NonPositiveLeaf(pub f64);

/// Integer voxel index: `floor(p / leaf)` per axis. A point on a voxel face
/// belongs to the higher-index voxel.
pub fn voxel_index(p: Point3, leaf: f64) -> (i64, i64, i64) {
    (
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    )
}

/// Replaces the members of each occupied voxel by their centroid.
///
/// Output order follows the first appearance of each voxel in the input.
/// Colors, when present, are averaged and rounded.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> Result<PointCloud, NonPositiveLeaf> {
    voxel_groups(cloud, leaf).map(|groups| {
        let mut points = Vec::with_capacity(groups.len());
        let mut colors = cloud.colors.as_ref().map(|_| Vec::with_capacity(groups.len()));
        for members in groups.values() {
            let sum = members
                .iter()
                .fold(Point3::ORIGIN, |acc, &i| acc + cloud.points[i]);
            points.push(sum * (1.0 / members.len() as f64));
            if let (Some(src), Some(out)) = (cloud.colors.as_ref(), colors.as_mut()) {
                let n = members.len() as u32;
                let (r, g, b) = members.iter().fold((0u32, 0u32, 0u32), |acc, &i| {
                    (
                        acc.0 + src[i].r as u32,
                        acc.1 + src[i].g as u32,
                        acc.2 + src[i].b as u32,
                    )
                });
                let avg = |s: u32| ((s + n / 2) / n) as u8;
                out.push(Rgb::new(avg(r), avg(g), avg(b)));
            }
        }
        PointCloud {
            points,
            colors,
            frame_id: cloud.frame_id.clone(),
        }
    })
}

/// Member indices of each occupied voxel, in first-appearance order.
pub fn voxel_groups(
    cloud: &PointCloud,
    leaf: f64,
) -> Result<IndexMap<(i64, i64, i64), Vec<usize>>, NonPositiveLeaf> {
    if !(leaf > 0.0 && leaf.is_finite()) {
        return Err(NonPositiveLeaf(leaf));
    }
    let mut groups: IndexMap<(i64, i64, i64), Vec<usize>> = IndexMap::new();
    for (i, &p) in cloud.points.iter().enumerate() {
        groups.entry(voxel_index(p, leaf)).or_default().push(i);
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    const MINIMAL: &str = "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\n\
WIDTH 1\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 1\nDATA ascii\n0 0 0\n";

    #[test]
    fn minimal_document() {
        let c = parse_pcd(MINIMAL).unwrap();
        assert_eq!(c.points(), &[Point3::ORIGIN]);
        assert!(c.colors().is_none());
    }

    #[test]
    fn count_mismatch() {
        let doc = MINIMAL.replace("POINTS 1", "POINTS 2");
        assert_eq!(
            parse_pcd(&doc),
            Err(PcdError::CountMismatch {
                declared: 2,
                found: 1
            })
        );
    }

    #[test]
    fn missing_keyword_is_malformed() {
        let doc = MINIMAL.replace("POINTS 1\n", "");
        assert!(matches!(parse_pcd(&doc), Err(PcdError::MalformedHeader(_))));
        let doc = MINIMAL.replace("FIELDS x y z\n", "");
        assert!(matches!(parse_pcd(&doc), Err(PcdError::MalformedHeader(_))));
        let doc = MINIMAL.replace("DATA ascii\n0 0 0\n", "");
        assert!(matches!(parse_pcd(&doc), Err(PcdError::MalformedHeader(_))));
    }

    #[test]
    fn binary_data_rejected() {
        let doc = MINIMAL.replace("DATA ascii", "DATA binary");
        assert!(matches!(parse_pcd(&doc), Err(PcdError::MalformedHeader(_))));
    }

    #[test]
    fn out_of_order_header_rejected() {
        let doc = MINIMAL.replace("VERSION 0.7\nFIELDS x y z\n", "FIELDS x y z\nVERSION 0.7\n");
        assert!(matches!(parse_pcd(&doc), Err(PcdError::MalformedHeader(_))));
    }

    #[test]
    fn non_finite_rejected() {
        for bad in ["nan 0 0", "0 inf 0", "0 0 -inf"] {
            let doc = MINIMAL.replace("\n0 0 0\n", &format!("\n{bad}\n"));
            assert_eq!(parse_pcd(&doc), Err(PcdError::NonFiniteValue { line: 11 }));
        }
    }

    #[test]
    fn unknown_fields_ignored_and_colors_read() {
        let doc = "VERSION 0.7\nFIELDS x intensity y z r g b normal\nSIZE 4 4 4 4 1 1 1 4\n\
TYPE F F F F U U U F\nCOUNT 1 1 1 1 1 1 1 3\nWIDTH 2\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\n\
POINTS 2\nDATA ascii\n1 9 2 3 200 60 40 0 0 1\n4 9 5 6 1 2 3 0 0 1\n";
        let c = parse_pcd(doc).unwrap();
        assert_eq!(c.points(), &[Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]);
        assert_eq!(c.colors().unwrap(), &[Rgb::new(200, 60, 40), Rgb::new(1, 2, 3)]);
    }

    #[test]
    fn empty_cloud_serializes() {
        let text = serialize_pcd(&PointCloud::default());
        assert!(text.contains("POINTS 0\n"));
        assert!(text.ends_with("DATA ascii\n"));
        assert_eq!(parse_pcd(&text).unwrap(), PointCloud::default());
    }

    #[test]
    fn single_point_header() {
        let text = serialize_pcd(&PointCloud::new(vec![Point3::new(0.1, 0.2, 0.3)]));
        assert!(text.contains("WIDTH 1\nHEIGHT 1\n"));
        assert!(text.contains("POINTS 1\n"));
    }

    #[test]
    fn frame_id_survives() {
        let c = PointCloud::new(vec![Point3::ORIGIN]).with_frame("plate_scan");
        assert_eq!(parse_pcd(&serialize_pcd(&c)).unwrap().frame_id(), "plate_scan");
    }

    #[test]
    fn single_voxel_centroid() {
        let pts = vec![
            Point3::new(0.01, 0.01, 0.01),
            Point3::new(0.02, 0.03, 0.01),
            Point3::new(0.04, 0.01, 0.02),
            Point3::new(0.03, 0.04, 0.04),
            Point3::new(0.00, 0.00, 0.00),
        ];
        let out = voxel_downsample(&PointCloud::new(pts.clone()), 0.05).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out.points()[0].distance(Point3::centroid(&pts).unwrap()) < 1e-15);
    }

    #[test]
    fn empty_and_bad_leaf() {
        assert!(voxel_downsample(&PointCloud::default(), 0.1).unwrap().is_empty());
        assert_eq!(
            voxel_downsample(&PointCloud::default(), 0.0),
            Err(NonPositiveLeaf(0.0))
        );
        assert!(voxel_downsample(&PointCloud::default(), -1.0).is_err());
        assert!(voxel_downsample(&PointCloud::default(), f64::NAN).is_err());
    }

    #[test]
    fn boundary_goes_to_higher_voxel() {
        assert_eq!(voxel_index(Point3::new(0.5, -0.5, 0.0), 0.5), (1, -1, 0));
    }

    #[test]
    fn colors_are_averaged() {
        let c = PointCloud::with_colors(
            vec![Point3::ORIGIN, Point3::new(0.01, 0.0, 0.0)],
            vec![Rgb::new(100, 0, 255), Rgb::new(201, 1, 255)],
        )
        .unwrap();
        let out = voxel_downsample(&c, 1.0).unwrap();
        assert_eq!(out.colors().unwrap(), &[Rgb::new(151, 1, 255)]);
    }

    fn coord() -> impl Strategy<Value = f64> {
        prop_oneof![
            -10.0..10.0f64,
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
        ]
    }

    fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
        prop::collection::vec(((coord(), coord(), coord()), any::<(u8, u8, u8)>()), 0..max)
            .prop_flat_map(|rows| {
                (Just(rows), any::<bool>())
            })
            .prop_map(|(rows, colored)| {
                let points = rows.iter().map(|&((x, y, z), _)| Point3::new(x, y, z)).collect();
                let colors = colored.then(|| rows.iter().map(|&(_, (r, g, b))| Rgb::new(r, g, b)).collect());
                PointCloud::try_new(points, colors).unwrap()
            })
    }

    fn local_cloud() -> impl Strategy<Value = PointCloud> {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 0..1000)
            .prop_map(|v| PointCloud::new(v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect()))
    }

    proptest! {
        #[test]
        fn text_round_trip(c in cloud(100)) {
            prop_assert_eq!(parse_pcd(&serialize_pcd(&c)).unwrap(), c);
        }

        #[test]
        fn downsample_matches_voxel_oracle(c in local_cloud()) {
            let leaf = 0.05;
            let out = voxel_downsample(&c, leaf).unwrap();
            let occupied: HashSet<_> = c.points().iter().map(|&p| voxel_index(p, leaf)).collect();
            prop_assert_eq!(out.len(), occupied.len());
            let represented: HashSet<_> = out.points().iter().map(|&p| voxel_index(p, leaf)).collect();
            prop_assert_eq!(represented.len(), out.len());
            prop_assert_eq!(represented, occupied);
        }

        #[test]
        fn downsample_idempotent(c in local_cloud()) {
            let once = voxel_downsample(&c, 0.05).unwrap();
            let twice = voxel_downsample(&once, 0.05).unwrap();
            prop_assert_eq!(once.len(), twice.len());
            for (a, b) in once.points().iter().zip(twice.points()) {
                prop_assert!(a.distance(*b) <= 1e-12);
            }
        }
    }
}
