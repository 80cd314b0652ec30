//! Point cloud, motion and matrix files.
//!
//! * PLY, ASCII or binary little-endian, any scalar property types; only the
//!   vertex `x`, `y`, `z` properties are kept.
//! * XYZ: one point per line, whitespace separated, extra columns ignored.
//! * Motions: each motion is four lines of four numbers (the homogeneous
//!   matrix, row-major), motions separated by a blank line.
//! * Matrices: one row per line, entries space separated.
//!
//! Numbers are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use mvreg_core::{Point3, PointCloud, RigidMotion};
use nalgebra::{DMatrix, Matrix4};

use crate::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    PlyBinaryLe,
    Xyz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Formats a value with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| IoError::io(path, e))
}

/// Loads a cloud. With `format = None` the format is taken from the file:
/// a `ply` magic line selects PLY (ASCII or binary per its header), anything
/// else is read as XYZ.
pub fn load_cloud(path: &Path, format: Option<CloudFormat>) -> Result<PointCloud, IoError> {
    let bytes = read_file(path)?;
    let points = match format {
        Some(CloudFormat::Xyz) => parse_xyz(&bytes)?,
        Some(expected) => {
            let (found, points) = parse_ply(&bytes)?;
            if found != expected {
                return Err(IoError::UnsupportedFormat(format!(
                    "expected {expected:?} but the header declares {found:?}"
                )));
            }
            points
        }
        None if bytes.starts_with(b"ply") => parse_ply(&bytes)?.1,
        None => parse_xyz(&bytes)?,
    };
    Ok(PointCloud::new(stem(path), points)?)
}

pub fn parse_xyz(bytes: &[u8]) -> Result<Vec<Point3>, IoError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IoError::ParseByte {
        offset: e.valid_up_to(),
        message: "XYZ file is not valid UTF-8".into(),
    })?;
    let mut points = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let mut c = [0.0; 3];
        for v in &mut c {
            let field = fields
                .next()
                .ok_or_else(|| IoError::line(k + 1, "expected three coordinates"))?;
            *v = field
                .parse()
                .map_err(|_| IoError::line(k + 1, format!("invalid number {field:?}")))?;
        }
        points.push(Point3::new(c[0], c[1], c[2]));
    }
    Ok(points)
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("eight bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: CloudFormat,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body: usize,
    /// Number of header lines, for ASCII line numbers.
    lines: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, IoError> {
    let mut offset = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| IoError::line(line_no + 1, "header is not terminated by end_header"))?;
        let raw = &bytes[offset..offset + end];
        offset += end + 1;
        line_no += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| IoError::line(line_no, "header is not valid UTF-8"))?
            .trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["ply"] if line_no == 1 => {}
            _ if line_no == 1 => return Err(IoError::line(1, "missing ply magic")),
            ["format", kind, _version] => {
                format = Some(match *kind {
                    "ascii" => CloudFormat::PlyAscii,
                    "binary_little_endian" => CloudFormat::PlyBinaryLe,
                    other => return Err(IoError::UnsupportedFormat(format!("PLY format {other}"))),
                });
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| {
                    IoError::line(line_no, format!("invalid element count {count:?}"))
                })?;
                elements.push(Element {
                    name: (*name).to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| IoError::line(line_no, "property before any element"))?;
                let count = Scalar::parse(count)
                    .ok_or_else(|| IoError::line(line_no, format!("unknown type {count}")))?;
                let item = Scalar::parse(item)
                    .ok_or_else(|| IoError::line(line_no, format!("unknown type {item}")))?;
                element.properties.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| IoError::line(line_no, "property before any element"))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| IoError::line(line_no, format!("unknown type {ty}")))?;
                element.properties.push(Property::Scalar {
                    name: (*name).to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => {
                return Err(IoError::line(
                    line_no,
                    format!("unrecognized header line {line:?}"),
                ))
            }
        }
    }
    let format = format.ok_or_else(|| IoError::line(line_no, "header has no format line"))?;
    Ok(Header {
        format,
        elements,
        body: offset,
        lines: line_no,
    })
}

fn xyz_slots(element: &Element) -> Result<[usize; 3], IoError> {
    let mut slots = [usize::MAX; 3];
    for (k, p) in element.properties.iter().enumerate() {
        if let Property::Scalar { name, .. } = p {
            match name.as_str() {
                "x" => slots[0] = k,
                "y" => slots[1] = k,
                "z" => slots[2] = k,
                _ => {}
            }
        }
    }
    if slots.contains(&usize::MAX) {
        return Err(IoError::UnsupportedFormat(
            "vertex element lacks x, y or z".into(),
        ));
    }
    Ok(slots)
}

/// Parses a PLY file, returning its declared encoding and the vertices.
pub fn parse_ply(bytes: &[u8]) -> Result<(CloudFormat, Vec<Point3>), IoError> {
    let header = parse_header(bytes)?;
    let vertex_at = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| IoError::UnsupportedFormat("PLY file has no vertex element".into()))?;
    let slots = xyz_slots(&header.elements[vertex_at])?;
    let points = match header.format {
        CloudFormat::PlyAscii => parse_ply_ascii(bytes, &header, vertex_at, slots)?,
        CloudFormat::PlyBinaryLe => parse_ply_binary(bytes, &header, vertex_at, slots)?,
        CloudFormat::Xyz => unreachable!("header parser yields PLY formats only"),
    };
    Ok((header.format, points))
}

fn parse_ply_ascii(
    bytes: &[u8],
    header: &Header,
    vertex_at: usize,
    slots: [usize; 3],
) -> Result<Vec<Point3>, IoError> {
    let body = std::str::from_utf8(&bytes[header.body..]).map_err(|e| IoError::ParseByte {
        offset: header.body + e.valid_up_to(),
        message: "ASCII body is not valid UTF-8".into(),
    })?;
    let mut lines = body
        .lines()
        .enumerate()
        .map(|(k, l)| (header.lines + k + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut points = Vec::new();
    for (e, element) in header.elements.iter().enumerate() {
        if e > vertex_at {
            break;
        }
        for _ in 0..element.count {
            let (line_no, line) = lines.next().ok_or_else(|| {
                IoError::line(
                    header.lines + 1,
                    format!("file ends inside element {}", element.name),
                )
            })?;
            if e < vertex_at {
                continue;
            }
            let values: Vec<&str> = line.split_whitespace().collect();
            if values.len() < element.properties.len() {
                return Err(IoError::line(
                    line_no,
                    "too few values for the vertex properties",
                ));
            }
            let mut c = [0.0; 3];
            for (axis, &slot) in slots.iter().enumerate() {
                c[axis] = values[slot].parse().map_err(|_| {
                    IoError::line(line_no, format!("invalid number {:?}", values[slot]))
                })?;
            }
            points.push(Point3::new(c[0], c[1], c[2]));
        }
    }
    Ok(points)
}

fn parse_ply_binary(
    bytes: &[u8],
    header: &Header,
    vertex_at: usize,
    slots: [usize; 3],
) -> Result<Vec<Point3>, IoError> {
    let mut offset = header.body;
    let take = |offset: &mut usize, n: usize| -> Result<&[u8], IoError> {
        let slice = bytes.get(*offset..*offset + n).ok_or(IoError::ParseByte {
            offset: *offset,
            message: "unexpected end of binary body".into(),
        })?;
        *offset += n;
        Ok(slice)
    };
    let mut points = Vec::new();
    for (e, element) in header.elements.iter().enumerate() {
        if e > vertex_at {
            break;
        }
        points.reserve(if e == vertex_at { element.count } else { 0 });
        for _ in 0..element.count {
            let mut c = [0.0; 3];
            for (k, p) in element.properties.iter().enumerate() {
                match p {
                    Property::Scalar { ty, .. } => {
                        let raw = take(&mut offset, ty.size())?;
                        if e == vertex_at {
                            if let Some(axis) = slots.iter().position(|&s| s == k) {
                                c[axis] = ty.read_le(raw);
                            }
                        }
                    }
                    Property::List { count, item } => {
                        let n = count.read_le(take(&mut offset, count.size())?);
                        if n.is_nan() || n < 0.0 {
                            return Err(IoError::ParseByte {
                                offset,
                                message: "invalid list length".into(),
                            });
                        }
                        take(&mut offset, n as usize * item.size())?;
                    }
                }
            }
            if e == vertex_at {
                points.push(Point3::new(c[0], c[1], c[2]));
            }
        }
    }
    Ok(points)
}

/// Writes vertices as PLY.
pub fn write_ply(
    path: &Path,
    points: &[Point3],
    binary: bool,
    precision: Precision,
) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let ty = match precision {
        Precision::F32 => "float",
        Precision::F64 => "double",
    };
    let encoding = if binary {
        "binary_little_endian"
    } else {
        "ascii"
    };
    let mut out = format!(
        "ply\nformat {encoding} 1.0\nelement vertex {}\n",
        points.len()
    );
    for axis in ["x", "y", "z"] {
        out.push_str(&format!("property {ty} {axis}\n"));
    }
    out.push_str("end_header\n");
    let io = |e| IoError::io(path, e);
    w.write_all(out.as_bytes()).map_err(io)?;
    for p in points {
        if binary {
            for &c in p.iter() {
                match precision {
                    Precision::F32 => w.write_all(&(c as f32).to_le_bytes()),
                    Precision::F64 => w.write_all(&c.to_le_bytes()),
                }
                .map_err(io)?;
            }
        } else {
            let line = match precision {
                Precision::F32 => format!("{} {} {}\n", p.x as f32, p.y as f32, p.z as f32),
                Precision::F64 => format!("{} {} {}\n", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z)),
            };
            w.write_all(line.as_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_xyz(path: &Path, points: &[Point3]) -> Result<(), IoError> {
    let mut text = String::with_capacity(points.len() * 72);
    for p in points {
        text.push_str(&format!(
            "{} {} {}\n",
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(p.z)
        ));
    }
    fs::write(path, text).map_err(|e| IoError::io(path, e))
}

/// Renders motions in the motion text format.
pub fn format_motions(motions: &[RigidMotion]) -> String {
    let mut out = String::new();
    for (k, m) in motions.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let h = m.to_homogeneous();
        for r in 0..4 {
            let row: Vec<String> = (0..4).map(|c| fmt_f64(h[(r, c)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn parse_motions(text: &str) -> Result<Vec<RigidMotion>, IoError> {
    let mut motions = Vec::new();
    let mut rows: Vec<[f64; 4]> = Vec::new();
    let mut first_line = 0;
    let mut flush = |rows: &mut Vec<[f64; 4]>, line: usize| -> Result<(), IoError> {
        if rows.is_empty() {
            return Ok(());
        }
        if rows.len() != 4 {
            return Err(IoError::line(
                line,
                format!("motion has {} rows, expected 4", rows.len()),
            ));
        }
        let m = Matrix4::from_fn(|r, c| rows[r][c]);
        let motion = RigidMotion::from_homogeneous(&m)
            .map_err(|e| IoError::line(line, format!("not a rigid motion: {e}")))?;
        motions.push(motion);
        rows.clear();
        Ok(())
    };
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = line.trim();
        if line.is_empty() {
            flush(&mut rows, first_line)?;
            continue;
        }
        if rows.is_empty() {
            first_line = line_no;
        }
        let values = parse_row(line, line_no)?;
        if values.len() != 4 {
            return Err(IoError::line(
                line_no,
                format!("expected 4 numbers, found {}", values.len()),
            ));
        }
        rows.push([values[0], values[1], values[2], values[3]]);
        if rows.len() > 4 {
            return Err(IoError::line(line_no, "motion has more than 4 rows"));
        }
    }
    flush(&mut rows, first_line)?;
    Ok(motions)
}

fn parse_row(line: &str, line_no: usize) -> Result<Vec<f64>, IoError> {
    line.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| IoError::line(line_no, format!("invalid number {t:?}")))
        })
        .collect()
}

pub fn load_motions(path: &Path) -> Result<Vec<RigidMotion>, IoError> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| IoError::ParseByte {
        offset: e.utf8_error().valid_up_to(),
        message: "motion file is not valid UTF-8".into(),
    })?;
    parse_motions(&text)
}

pub fn save_motions(path: &Path, motions: &[RigidMotion]) -> Result<(), IoError> {
    fs::write(path, format_motions(motions)).map_err(|e| IoError::io(path, e))
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 24);
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| fmt_f64(m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Mask rows as `0`/`1` entries.
pub fn format_mask(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 2);
    for r in 0..m.nrows() {
        let row: Vec<&str> = (0..m.ncols())
            .map(|c| if m[(r, c)] > 0.0 { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>, IoError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(line, k + 1)?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(IoError::line(
                    k + 1,
                    format!("row has {} entries, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>, IoError> {
    let mut text = String::new();
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    BufReader::new(file)
        .read_to_string(&mut text)
        .map_err(|e| IoError::io(path, e))?;
    parse_matrix(&text)
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), IoError> {
    fs::write(path, format_matrix(m)).map_err(|e| IoError::io(path, e))
}

pub fn save_mask(path: &Path, m: &DMatrix<f64>) -> Result<(), IoError> {
    fs::write(path, format_mask(m)).map_err(|e| IoError::io(path, e))
}

/// Reads the lines of a text file.
pub fn read_lines(path: &Path) -> Result<Vec<String>, IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| IoError::io(path, e))
}
