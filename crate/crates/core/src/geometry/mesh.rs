//! Triangle-mesh ingestion: ASCII OFF, ASCII / binary little-endian PLY,
//! and uniform surface-area sampling.
//!
//! Only vertex positions and faces are read; normals, colors and other
//! attributes are skipped.

use std::path::Path;

use crate::geometry::cloud::PointCloudOf;
use crate::geometry::vec3::Vec3;
use crate::geometry::GeometryError;
use crate::rng::SplitRng;
use crate::scalar::{cast, Scalar};

#[derive(Clone, Debug, Default)]
pub struct TriMesh<S> {
    pub vertices: Vec<Vec3<S>>,
    pub faces: Vec<[usize; 3]>,
}

impl<S: Scalar> TriMesh<S> {
    pub fn is_point_set(&self) -> bool {
        self.faces.is_empty()
    }

    fn face_area(&self, f: [usize; 3]) -> S {
        let a = self.vertices[f[0]];
        let b = self.vertices[f[1]];
        let c = self.vertices[f[2]];
        (b - a).cross(c - a).norm() * cast::<S>(0.5)
    }

    /// Draws `n` points uniformly by surface area.
    pub fn sample_surface(&self, n: usize, rng: &mut SplitRng) -> Result<PointCloudOf<S>, GeometryError> {
        if self.faces.is_empty() {
            return Err(GeometryError::Parse("mesh has no faces to sample".into()));
        }
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = S::zero();
        for &f in &self.faces {
            total += self.face_area(f);
            cumulative.push(total);
        }
        if !(total > S::zero()) {
            return Err(GeometryError::Parse("mesh has zero surface area".into()));
        }
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let r = cast::<S>(rng.uniform()) * total;
            let idx = match cumulative.binary_search_by(|c| {
                c.partial_cmp(&r).unwrap_or(std::cmp::Ordering::Less)
            }) {
                Ok(i) => i,
                Err(i) => i.min(self.faces.len() - 1),
            };
            let f = self.faces[idx];
            let (a, b, c) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
            let mut u = cast::<S>(rng.uniform());
            let mut v = cast::<S>(rng.uniform());
            if u + v > S::one() {
                u = S::one() - u;
                v = S::one() - v;
            }
            points.push(a + (b - a).scaled(u) + (c - a).scaled(v));
        }
        Ok(PointCloudOf::from_points(points))
    }
}

fn parse_error(msg: impl Into<String>) -> GeometryError {
    GeometryError::Parse(msg.into())
}

/// Triangulates a polygon face as a fan around its first vertex.
fn push_fan(faces: &mut Vec<[usize; 3]>, poly: &[usize], n_vertices: usize) -> Result<(), GeometryError> {
    if poly.len() < 3 {
        return Err(parse_error(format!("face with {} vertices", poly.len())));
    }
    if poly.iter().any(|&i| i >= n_vertices) {
        return Err(parse_error("face references vertex out of range"));
    }
    for i in 1..poly.len() - 1 {
        faces.push([poly[0], poly[i], poly[i + 1]]);
    }
    Ok(())
}

/// Parses an ASCII OFF mesh (or point set when the face count is zero).
pub fn parse_off<S: Scalar>(text: &str) -> Result<TriMesh<S>, GeometryError> {
    let mut tokens = text
        .lines()
        .map(|l| match l.find('#') {
            Some(i) => &l[..i],
            None => l,
        })
        .flat_map(|l| l.split_whitespace());
    let magic = tokens.next().ok_or_else(|| parse_error("empty OFF file"))?;
    if magic != "OFF" {
        return Err(parse_error(format!("expected OFF header, got {magic:?}")));
    }
    let next_usize = |what: &str, tokens: &mut dyn Iterator<Item = &str>| -> Result<usize, GeometryError> {
        tokens
            .next()
            .ok_or_else(|| parse_error(format!("missing {what}")))?
            .parse::<usize>()
            .map_err(|_| parse_error(format!("bad {what}")))
    };
    let n_vertices = next_usize("vertex count", &mut tokens)?;
    let n_faces = next_usize("face count", &mut tokens)?;
    let _n_edges = next_usize("edge count", &mut tokens)?;

    let mut vertices = Vec::with_capacity(n_vertices);
    for i in 0..n_vertices {
        let mut coord = [S::zero(); 3];
        for c in coord.iter_mut() {
            let tok = tokens
                .next()
                .ok_or_else(|| parse_error(format!("vertex {i} truncated")))?;
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_error(format!("bad coordinate {tok:?}")))?;
            *c = cast(v);
        }
        vertices.push(Vec3::from_array(coord));
    }
    let mut faces = Vec::with_capacity(n_faces);
    for i in 0..n_faces {
        let count = next_usize(&format!("face {i} vertex count"), &mut tokens)?;
        let mut poly = Vec::with_capacity(count);
        for _ in 0..count {
            poly.push(next_usize("face index", &mut tokens)?);
        }
        push_fan(&mut faces, &poly, n_vertices)?;
    }
    Ok(TriMesh { vertices, faces })
}

#[derive(Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(name: &str) -> Result<Self, GeometryError> {
        Ok(match name {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            other => return Err(parse_error(format!("unsupported PLY type {other:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read_binary(self, bytes: &[u8]) -> f64 {
        match self {
            PlyType::I8 => bytes[0] as i8 as f64,
            PlyType::U8 => bytes[0] as f64,
            PlyType::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            PlyType::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            PlyType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

enum PlyProperty {
    Scalar { ty: PlyType, name: String },
    List { count: PlyType, item: PlyType, name: String },
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

/// Parses a PLY file, ASCII or binary little-endian.
pub fn parse_ply<S: Scalar>(bytes: &[u8]) -> Result<TriMesh<S>, GeometryError> {
    // Header is always ASCII, terminated by "end_header".
    let mut offset = 0usize;
    let read_line = |offset: &mut usize| -> Result<String, GeometryError> {
        let start = *offset;
        while *offset < bytes.len() && bytes[*offset] != b'\n' {
            *offset += 1;
        }
        if *offset >= bytes.len() {
            return Err(parse_error("unterminated PLY header"));
        }
        let line = String::from_utf8_lossy(&bytes[start..*offset]).trim().to_string();
        *offset += 1;
        Ok(line)
    };

    if read_line(&mut offset)? != "ply" {
        return Err(parse_error("missing ply magic"));
    }
    let mut format = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let line = read_line(&mut offset)?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                format = Some(match parts.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    other => return Err(parse_error(format!("unsupported PLY format {other:?}"))),
                });
            }
            Some("element") => {
                let name = parts
                    .next()
                    .ok_or_else(|| parse_error("element without name"))?
                    .to_string();
                let count = parts
                    .next()
                    .ok_or_else(|| parse_error("element without count"))?
                    .parse()
                    .map_err(|_| parse_error("bad element count"))?;
                elements.push(PlyElement {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_error("property before element"))?;
                let first = parts.next().ok_or_else(|| parse_error("bare property"))?;
                if first == "list" {
                    let count = PlyType::parse(parts.next().ok_or_else(|| parse_error("list count type"))?)?;
                    let item = PlyType::parse(parts.next().ok_or_else(|| parse_error("list item type"))?)?;
                    let name = parts
                        .next()
                        .ok_or_else(|| parse_error("list property name"))?
                        .to_string();
                    element.properties.push(PlyProperty::List { count, item, name });
                } else {
                    let ty = PlyType::parse(first)?;
                    let name = parts
                        .next()
                        .ok_or_else(|| parse_error("property name"))?
                        .to_string();
                    element.properties.push(PlyProperty::Scalar { ty, name });
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(parse_error(format!("unknown header keyword {other:?}"))),
        }
    }
    let format = format.ok_or_else(|| parse_error("PLY header lacks format line"))?;

    let mut vertices: Vec<Vec3<S>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    match format {
        PlyFormat::Ascii => {
            let body = String::from_utf8_lossy(&bytes[offset..]).into_owned();
            let mut tokens = body.split_whitespace();
            let mut next_tok = |what: &str| -> Result<String, GeometryError> {
                tokens
                    .next()
                    .map(str::to_string)
                    .ok_or_else(|| parse_error(format!("truncated PLY body at {what}")))
            };
            for element in &elements {
                for _ in 0..element.count {
                    let mut xyz = [f64::NAN; 3];
                    let mut poly: Vec<usize> = Vec::new();
                    for prop in &element.properties {
                        match prop {
                            PlyProperty::Scalar { name, .. } => {
                                let tok = next_tok(name)?;
                                let v: f64 = tok
                                    .parse()
                                    .map_err(|_| parse_error(format!("bad value {tok:?}")))?;
                                match (element.name.as_str(), name.as_str()) {
                                    ("vertex", "x") => xyz[0] = v,
                                    ("vertex", "y") => xyz[1] = v,
                                    ("vertex", "z") => xyz[2] = v,
                                    _ => {}
                                }
                            }
                            PlyProperty::List { name, .. } => {
                                let count: usize = next_tok(name)?
                                    .parse()
                                    .map_err(|_| parse_error("bad list count"))?;
                                let mut items = Vec::with_capacity(count);
                                for _ in 0..count {
                                    let tok = next_tok(name)?;
                                    let v: f64 = tok
                                        .parse()
                                        .map_err(|_| parse_error(format!("bad index {tok:?}")))?;
                                    items.push(v as usize);
                                }
                                if element.name == "face"
                                    && (name == "vertex_indices" || name == "vertex_index")
                                {
                                    poly = items;
                                }
                            }
                        }
                    }
                    if element.name == "vertex" {
                        if xyz.iter().any(|v| v.is_nan()) {
                            return Err(parse_error("vertex element missing x/y/z"));
                        }
                        vertices.push(Vec3::new(cast(xyz[0]), cast(xyz[1]), cast(xyz[2])));
                    }
                    if !poly.is_empty() {
                        push_fan(&mut faces, &poly, usize::MAX)?;
                    }
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut pos = offset;
            let mut take = |n: usize| -> Result<&[u8], GeometryError> {
                if pos + n > bytes.len() {
                    return Err(parse_error("truncated PLY binary body"));
                }
                let slice = &bytes[pos..pos + n];
                pos += n;
                Ok(slice)
            };
            for element in &elements {
                for _ in 0..element.count {
                    let mut xyz = [f64::NAN; 3];
                    let mut poly: Vec<usize> = Vec::new();
                    for prop in &element.properties {
                        match prop {
                            PlyProperty::Scalar { ty, name } => {
                                let v = ty.read_binary(take(ty.size())?);
                                match (element.name.as_str(), name.as_str()) {
                                    ("vertex", "x") => xyz[0] = v,
                                    ("vertex", "y") => xyz[1] = v,
                                    ("vertex", "z") => xyz[2] = v,
                                    _ => {}
                                }
                            }
                            PlyProperty::List { count, item, name } => {
                                let n = count.read_binary(take(count.size())?) as usize;
                                let mut items = Vec::with_capacity(n);
                                for _ in 0..n {
                                    items.push(item.read_binary(take(item.size())?) as usize);
                                }
                                if element.name == "face"
                                    && (name == "vertex_indices" || name == "vertex_index")
                                {
                                    poly = items;
                                }
                            }
                        }
                    }
                    if element.name == "vertex" {
                        if xyz.iter().any(|v| v.is_nan()) {
                            return Err(parse_error("vertex element missing x/y/z"));
                        }
                        vertices.push(Vec3::new(cast(xyz[0]), cast(xyz[1]), cast(xyz[2])));
                    }
                    if !poly.is_empty() {
                        push_fan(&mut faces, &poly, usize::MAX)?;
                    }
                }
            }
        }
    }

    // Late validation: fan construction above cannot see the final vertex
    // count when faces precede vertices in element order.
    if faces.iter().flatten().any(|&i| i >= vertices.len()) {
        return Err(parse_error("face references vertex out of range"));
    }
    Ok(TriMesh { vertices, faces })
}

/// Reads a mesh or point set from an OFF or PLY file, sniffing the magic.
pub fn read_mesh<S: Scalar>(path: &Path) -> Result<TriMesh<S>, GeometryError> {
    let bytes = std::fs::read(path).map_err(|e| GeometryError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if bytes.starts_with(b"ply") {
        parse_ply(&bytes)
    } else if bytes.starts_with(b"OFF") {
        parse_off(&String::from_utf8_lossy(&bytes))
    } else {
        Err(parse_error(format!(
            "{}: unrecognized mesh format (expected OFF or PLY magic)",
            path.display()
        )))
    }
}
