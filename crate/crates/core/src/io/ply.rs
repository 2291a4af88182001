//! Minimal binary little-endian PLY reader/writer.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
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
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
pub struct Property {
    pub name: String,
    pub kind: PropertyKind,
}

#[derive(Debug, Clone)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
    /// one column per scalar property, in declaration order
    pub scalars: Vec<Vec<f64>>,
    /// one column per list property
    pub lists: Vec<Vec<Vec<u32>>>,
}

impl Element {
    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        self.properties
            .iter()
            .filter(|p| matches!(p.kind, PropertyKind::Scalar(_)))
            .position(|p| p.name == name)
            .map(|i| self.scalars[i].as_slice())
    }

    pub fn list(&self, name: &str) -> Option<&[Vec<u32>]> {
        self.properties
            .iter()
            .filter(|p| matches!(p.kind, PropertyKind::List { .. }))
            .position(|p| p.name == name)
            .map(|i| self.lists[i].as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct PlyData {
    pub elements: Vec<Element>,
}

impl PlyData {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let bad = |msg: String| Error::format(path, msg);

    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<std::fs::File>| -> Result<String> {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::format(path, "unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };

    if next_line(&mut reader)? != "ply" {
        return Err(bad("missing 'ply' magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_ok = false;
    loop {
        let l = next_line(&mut reader)?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, _] => return Err(bad(format!("unsupported PLY format '{other}'"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count '{count}'")))?,
                properties: Vec::new(),
                scalars: Vec::new(),
                lists: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before element".into()))?;
                let count = ScalarType::parse(ct).ok_or_else(|| bad(format!("bad list count type '{ct}'")))?;
                let item = ScalarType::parse(it).ok_or_else(|| bad(format!("bad list item type '{it}'")))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::List { count, item },
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before element".into()))?;
                let ty = ScalarType::parse(ty).ok_or_else(|| bad(format!("bad property type '{ty}'")))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::Scalar(ty),
                });
            }
            _ => return Err(bad(format!("malformed header line '{l}'"))),
        }
    }
    if !format_ok {
        return Err(bad("missing format line".into()));
    }

    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > body.len() {
            return Err(Error::format(path, "truncated body"));
        }
        let s = &body[pos..pos + n];
        pos += n;
        Ok(s)
    };
    for el in elements.iter_mut() {
        let n_scalar = el
            .properties
            .iter()
            .filter(|p| matches!(p.kind, PropertyKind::Scalar(_)))
            .count();
        let n_list = el.properties.len() - n_scalar;
        el.scalars = vec![Vec::with_capacity(el.count); n_scalar];
        el.lists = vec![Vec::with_capacity(el.count); n_list];
        for _ in 0..el.count {
            let (mut si, mut li) = (0, 0);
            for p in &el.properties {
                match p.kind {
                    PropertyKind::Scalar(t) => {
                        el.scalars[si].push(t.decode(take(t.size())?));
                        si += 1;
                    }
                    PropertyKind::List { count, item } => {
                        let n = count.decode(take(count.size())?) as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(item.decode(take(item.size())?) as u32);
                        }
                        el.lists[li].push(items);
                        li += 1;
                    }
                }
            }
        }
    }
    Ok(PlyData { elements })
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn header(elements: &[(&str, usize, Vec<String>)]) -> String {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    for (name, count, props) in elements {
        h.push_str(&format!("element {name} {count}\n"));
        for p in props {
            h.push_str(&format!("property {p}\n"));
        }
    }
    h.push_str("end_header\n");
    h
}
