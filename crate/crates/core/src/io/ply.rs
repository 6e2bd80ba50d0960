//! Binary little-endian PLY for point clouds and surfel maps.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, Vector3};

use crate::error::{Error, Result};
use crate::frame::Rgb;
use crate::surfel_map::{Surfel, SurfelMap};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub colors: Vec<Rgb>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Vector3<f64>, n: Vector3<f64>, c: Rgb) {
        self.points.push(p);
        self.normals.push(n);
        self.colors.push(c);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// Vertex table of a PLY file: property names and one row per vertex.
#[derive(Debug, Clone)]
pub struct PlyTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl PlyTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn require(&self, name: &str, path: &Path) -> Result<usize> {
        self.column(name)
            .ok_or_else(|| Error::Dataset(format!("{}: missing vertex property '{name}'", path.display())))
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads the vertex element of an ascii or binary little-endian PLY file.
/// Other elements must come after the vertices and are ignored.
pub fn read_ply_table(path: &Path) -> Result<PlyTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut lineno = 0;
    let mut next_line = |reader: &mut BufReader<std::fs::File>, line: &mut String| -> Result<()> {
        line.clear();
        lineno += 1;
        let n = reader.read_line(line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(parse_err(path, lineno, "unexpected end of header"));
        }
        Ok(())
    };
    next_line(&mut reader, &mut line)?;
    if line.trim() != "ply" {
        return Err(parse_err(path, 1, "missing 'ply' magic"));
    }
    let mut binary = None;
    let mut count = None;
    let mut in_vertex = false;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    loop {
        next_line(&mut reader, &mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", f, _] => {
                return Err(Error::Dataset(format!(
                    "{}: unsupported PLY format {f}",
                    path.display()
                )))
            }
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|e| parse_err(path, 0, e.to_string()))?);
                } else if count.is_none() {
                    return Err(Error::Dataset(format!(
                        "{}: vertex element must come first",
                        path.display()
                    )));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::Dataset(format!(
                    "{}: list properties on vertices are not supported",
                    path.display()
                )))
            }
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty)
                    .ok_or_else(|| Error::Dataset(format!("{}: unknown type {ty}", path.display())))?;
                props.push((name.to_string(), s));
            }
            _ => {}
        }
    }
    let binary = binary.ok_or_else(|| Error::Dataset(format!("{}: missing format", path.display())))?;
    let count = count.unwrap_or(0);
    let mut rows = Vec::with_capacity(count);
    if binary {
        let stride: usize = props.iter().map(|p| p.1.size()).sum();
        let mut buf = vec![0u8; stride];
        for _ in 0..count {
            reader.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            let mut off = 0;
            let row = props
                .iter()
                .map(|(_, s)| {
                    let v = s.decode(&buf[off..]);
                    off += s.size();
                    v
                })
                .collect();
            rows.push(row);
        }
    } else {
        for _ in 0..count {
            next_line(&mut reader, &mut line)?;
            let row: Vec<f64> = line
                .split_whitespace()
                .take(props.len())
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(path, 0, e.to_string()))?;
            if row.len() != props.len() {
                return Err(parse_err(path, 0, "short vertex row"));
            }
            rows.push(row);
        }
    }
    Ok(PlyTable {
        names: props.into_iter().map(|p| p.0).collect(),
        rows,
    })
}

fn header(out: &mut impl Write, count: usize, props: &[(&str, &str)]) -> std::io::Result<()> {
    writeln!(out, "ply")?;
    writeln!(out, "format binary_little_endian 1.0")?;
    writeln!(out, "element vertex {count}")?;
    for (ty, name) in props {
        writeln!(out, "property {ty} {name}")?;
    }
    writeln!(out, "end_header")
}

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_pointcloud_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let write = || -> std::io::Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        let props = [
            ("float", "x"),
            ("float", "y"),
            ("float", "z"),
            ("float", "nx"),
            ("float", "ny"),
            ("float", "nz"),
            ("uchar", "red"),
            ("uchar", "green"),
            ("uchar", "blue"),
        ];
        header(&mut out, cloud.len(), &props)?;
        for i in 0..cloud.len() {
            for v in cloud.points[i].iter().chain(cloud.normals[i].iter()) {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
            out.write_all(&cloud.colors[i].map(to_u8))?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_pointcloud_ply(path: &Path) -> Result<PointCloud> {
    let t = read_ply_table(path)?;
    let [x, y, z] = ["x", "y", "z"].map(|n| t.require(n, path));
    let (x, y, z) = (x?, y?, z?);
    let normal = ["nx", "ny", "nz"].map(|n| t.column(n));
    let color = ["red", "green", "blue"].map(|n| t.column(n));
    let mut cloud = PointCloud::default();
    for r in &t.rows {
        let n = match normal {
            [Some(a), Some(b), Some(c)] => Vector3::new(r[a], r[b], r[c]),
            _ => Vector3::zeros(),
        };
        let c = match color {
            [Some(a), Some(b), Some(c)] => [r[a] / 255.0, r[b] / 255.0, r[c] / 255.0],
            _ => [0.0; 3],
        };
        cloud.push(Vector3::new(r[x], r[y], r[z]), n, c);
    }
    Ok(cloud)
}

const MAP_PROPS: [(&str, &str); 16] = [
    ("double", "x"),
    ("double", "y"),
    ("double", "z"),
    ("float", "nx"),
    ("float", "ny"),
    ("float", "nz"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
    ("double", "rot_w"),
    ("double", "rot_x"),
    ("double", "rot_y"),
    ("double", "rot_z"),
    ("double", "log_scale_u"),
    ("double", "log_scale_v"),
    ("double", "logit_opacity"),
];

/// Writes the surfel map. Colors are also stored exactly as `f_r/f_g/f_b`.
pub fn write_map_ply(map: &SurfelMap, path: &Path) -> Result<()> {
    let write = || -> std::io::Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        let mut props = MAP_PROPS.to_vec();
        props.extend([("double", "f_r"), ("double", "f_g"), ("double", "f_b")]);
        header(&mut out, map.len(), &props)?;
        for s in map.surfels() {
            for v in s.position.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
            for v in s.normal().iter() {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
            out.write_all(&s.color.map(to_u8))?;
            let q = &s.rotation;
            for v in [q.w, q.i, q.j, q.k, s.log_scale[0], s.log_scale[1], s.logit_opacity] {
                out.write_all(&v.to_le_bytes())?;
            }
            for v in s.color {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_map_ply(path: &Path) -> Result<SurfelMap> {
    let t = read_ply_table(path)?;
    let names = [
        "x",
        "y",
        "z",
        "rot_w",
        "rot_x",
        "rot_y",
        "rot_z",
        "log_scale_u",
        "log_scale_v",
        "logit_opacity",
    ];
    let cols: Vec<usize> = names.iter().map(|n| t.require(n, path)).collect::<Result<_>>()?;
    let exact = ["f_r", "f_g", "f_b"].map(|n| t.column(n));
    let bytes = ["red", "green", "blue"].map(|n| t.column(n));
    let mut surfels = Vec::with_capacity(t.rows.len());
    for r in &t.rows {
        let v = |i: usize| r[cols[i]];
        let color = match (exact, bytes) {
            ([Some(a), Some(b), Some(c)], _) => [r[a], r[b], r[c]],
            (_, [Some(a), Some(b), Some(c)]) => [r[a] / 255.0, r[b] / 255.0, r[c] / 255.0],
            _ => [0.5; 3],
        };
        let mut s = Surfel {
            position: Vector3::new(v(0), v(1), v(2)),
            rotation: Quaternion::new(v(3), v(4), v(5), v(6)),
            log_scale: [v(7), v(8)],
            logit_opacity: v(9),
            color,
        };
        // files from other writers may carry rounded quaternions
        if (s.rotation.norm() - 1.0).abs() > 1e-12 {
            s.normalize_rotation();
        }
        s.check_invariants()
            .map_err(|e| Error::Dataset(format!("{}: invalid surfel: {e}", path.display())))?;
        surfels.push(s);
    }
    Ok(SurfelMap::from_surfels(surfels))
}
