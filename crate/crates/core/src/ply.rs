//! PLY reading and writing.
//!
//! The reader accepts `ascii` and `binary_little_endian` files. From the
//! `vertex` element it reads `x`, `y`, `z` (float or double, required),
//! `red`, `green`, `blue` (uchar, optional, all three or none) and `label`
//! (any integer type that fits `u16`, optional). Other properties and other
//! elements are skipped.
//!
//! The writer always produces `binary_little_endian` with `double` positions,
//! optional `uchar` colors and a `ushort` label, so float32 and float64
//! inputs both survive a round trip bit-exactly.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ClassId, LabelSet, PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
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
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::Format(format!("unknown PLY scalar type {other:?}"))),
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

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum PropertyKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Format("missing end_header".into()))?;
    let mut body_offset = end + END.len();
    // Header line terminator: \n or \r\n.
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) == Some(&b'\n') {
        body_offset += 1;
    }
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Format("PLY header is not valid UTF-8".into()))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return Err(Error::Format("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", fmt, _version] => {
                format = Some(match *fmt {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(Error::Format(format!("unsupported PLY format {other:?}")))
                    }
                });
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count {count:?}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?;
                element.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::List {
                        count: Scalar::parse(count)?,
                        item: Scalar::parse(item)?,
                    },
                });
            }
            ["property", ty, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?;
                element.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::Scalar(Scalar::parse(ty)?),
                });
            }
            _ => return Err(Error::Format(format!("unrecognized header line {line:?}"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| Error::Format("missing format line".into()))?,
        elements,
        body_offset,
    })
}

/// Sequential value source over either body encoding.
trait Body {
    fn scalar(&mut self, ty: Scalar) -> Result<f64>;

    fn skip(&mut self, ty: Scalar) -> Result<()> {
        self.scalar(ty).map(drop)
    }
}

struct BinaryBody<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BinaryBody<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("unexpected end of binary PLY body".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

impl Body for BinaryBody<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        let b = self.take(ty.size())?;
        Ok(match ty {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
    }

    fn skip(&mut self, ty: Scalar) -> Result<()> {
        self.take(ty.size()).map(drop)
    }
}

struct AsciiBody<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl Body for AsciiBody<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        let token = self
            .tokens
            .next()
            .ok_or_else(|| Error::Format("unexpected end of ASCII PLY body".into()))?;
        let value = if ty.is_float() {
            // Parse float32 properties as f32 so the widened value matches
            // what a binary file holding the same number would produce.
            match ty {
                Scalar::F32 => token.parse::<f32>().map(f64::from).ok(),
                _ => token.parse::<f64>().ok(),
            }
        } else {
            token.parse::<i64>().ok().map(|v| v as f64)
        };
        value.ok_or_else(|| Error::Format(format!("bad {ty:?} value {token:?}")))
    }
}

fn skip_element(body: &mut dyn Body, element: &Element) -> Result<()> {
    for _ in 0..element.count {
        for prop in &element.properties {
            match prop.kind {
                PropertyKind::Scalar(ty) => body.skip(ty)?,
                PropertyKind::List { count, item } => {
                    let n = body.scalar(count)?;
                    for _ in 0..n as usize {
                        body.skip(item)?;
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Slot {
    X,
    Y,
    Z,
    Red,
    Green,
    Blue,
    Label,
    Ignore,
}

fn read_vertices(body: &mut dyn Body, element: &Element) -> Result<PointCloud> {
    let find = |name: &str| element.properties.iter().find(|p| p.name == name);
    for axis in ["x", "y", "z"] {
        match find(axis).map(|p| &p.kind) {
            Some(PropertyKind::Scalar(ty)) if ty.is_float() => {}
            Some(_) => {
                return Err(Error::Format(format!(
                    "vertex property {axis} must be float or double"
                )))
            }
            None => return Err(Error::Format(format!("missing vertex property {axis}"))),
        }
    }
    let color_props: Vec<_> = ["red", "green", "blue"].iter().map(|n| find(n)).collect();
    let has_color = match color_props.iter().filter(|p| p.is_some()).count() {
        0 => false,
        3 => {
            if color_props
                .iter()
                .any(|p| !matches!(p.unwrap().kind, PropertyKind::Scalar(Scalar::U8)))
            {
                return Err(Error::Format("color properties must be uchar".into()));
            }
            true
        }
        _ => return Err(Error::Format("partial red/green/blue properties".into())),
    };
    let has_label = match find("label").map(|p| &p.kind) {
        Some(PropertyKind::Scalar(ty)) if !ty.is_float() => true,
        Some(_) => return Err(Error::Format("label property must be an integer".into())),
        None => false,
    };

    let slots: Vec<Slot> = element
        .properties
        .iter()
        .map(|p| match p.name.as_str() {
            "x" => Slot::X,
            "y" => Slot::Y,
            "z" => Slot::Z,
            "red" => Slot::Red,
            "green" => Slot::Green,
            "blue" => Slot::Blue,
            "label" => Slot::Label,
            _ => Slot::Ignore,
        })
        .collect();

    let n = element.count;
    let mut positions = Vec::with_capacity(n);
    let mut colors = has_color.then(|| Vec::with_capacity(n));
    let mut labels = has_label.then(|| Vec::with_capacity(n));
    for index in 0..n {
        let mut p = [0.0f64; 3];
        let mut rgb = [0u8; 3];
        let mut label = 0.0;
        for (prop, slot) in element.properties.iter().zip(&slots) {
            let ty = match prop.kind {
                PropertyKind::Scalar(ty) => ty,
                PropertyKind::List { count, item } => {
                    let len = body.scalar(count)?;
                    for _ in 0..len as usize {
                        body.skip(item)?;
                    }
                    continue;
                }
            };
            match slot {
                Slot::Ignore => body.skip(ty)?,
                Slot::X => p[0] = body.scalar(ty)?,
                Slot::Y => p[1] = body.scalar(ty)?,
                Slot::Z => p[2] = body.scalar(ty)?,
                Slot::Red => rgb[0] = body.scalar(ty)? as u8,
                Slot::Green => rgb[1] = body.scalar(ty)? as u8,
                Slot::Blue => rgb[2] = body.scalar(ty)? as u8,
                Slot::Label => label = body.scalar(ty)?,
            }
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Data(format!("non-finite coordinate at vertex {index}")));
        }
        positions.push(Vec3::new(p[0], p[1], p[2]));
        if let Some(c) = colors.as_mut() {
            c.push(rgb);
        }
        if let Some(l) = labels.as_mut() {
            if !(0.0..=ClassId::MAX as f64).contains(&label) {
                return Err(Error::Data(format!(
                    "label {label} at vertex {index} does not fit uint16"
                )));
            }
            l.push(label as ClassId);
        }
    }
    PointCloud::new(positions, colors, labels)
}

/// Parses a PLY document held in memory.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let body_bytes = &bytes[header.body_offset..];
    let mut ascii;
    let mut binary;
    let body: &mut dyn Body = match header.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body_bytes)
                .map_err(|_| Error::Format("ASCII PLY body is not valid UTF-8".into()))?;
            ascii = AsciiBody {
                tokens: text.split_ascii_whitespace(),
            };
            &mut ascii
        }
        PlyFormat::BinaryLittleEndian => {
            binary = BinaryBody {
                bytes: body_bytes,
                pos: 0,
            };
            &mut binary
        }
    };
    for element in &header.elements {
        if element.name == "vertex" {
            return read_vertices(body, element);
        }
        skip_element(body, element)?;
    }
    Err(Error::Format("no vertex element".into()))
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

/// Encodes `cloud` as binary little-endian PLY, with a `label` property
/// when `labels` is given.
pub fn encode_ply(cloud: &PointCloud, labels: Option<&[ClassId]>, label_set: &LabelSet) -> Result<Vec<u8>> {
    let Some(labels) = labels else {
        return Ok(encode_body(cloud, None));
    };
    if labels.len() != cloud.len() {
        return Err(Error::Argument(format!(
            "{} labels for {} points",
            labels.len(),
            cloud.len()
        )));
    }
    if let Some((i, l)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| !label_set.contains(l))
    {
        return Err(Error::Argument(format!(
            "label {l} at point {i} is outside the label set (max id {})",
            label_set.len() - 1
        )));
    }
    Ok(encode_body(cloud, Some(labels)))
}

fn encode_body(cloud: &PointCloud, labels: Option<&[ClassId]>) -> Vec<u8> {
    let colors = cloud.colors();
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n",
        cloud.len()
    );
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if labels.is_some() {
        header.push_str("property ushort label\n");
    }
    header.push_str("end_header\n");

    let stride = 24 + if colors.is_some() { 3 } else { 0 } + if labels.is_some() { 2 } else { 0 };
    let mut out = Vec::with_capacity(header.len() + stride * cloud.len());
    out.extend_from_slice(header.as_bytes());
    for (i, p) in cloud.positions().iter().enumerate() {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(c) = colors {
            out.extend_from_slice(&c[i]);
        }
        if let Some(l) = labels {
            out.extend_from_slice(&l[i].to_le_bytes());
        }
    }
    out
}

pub fn save_cloud(
    cloud: &PointCloud,
    labels: Option<&[ClassId]>,
    label_set: &LabelSet,
    path: &Path,
) -> Result<()> {
    let bytes = encode_ply(cloud, labels, label_set)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels() -> LabelSet {
        LabelSet::outdoor()
    }

    #[test]
    fn ascii_xyz_only() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\n\
                    property float y\nproperty float z\nend_header\n\
                    0 0 0\n1 2 3\n-1.5 0.25 7\n";
        let cloud = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(cloud.len(), 3);
        assert!(cloud.colors().is_none());
        assert!(cloud.gt_labels().is_none());
        assert_eq!(cloud.position(2), Vec3::new(-1.5, 0.25, 7.0));
    }

    #[test]
    fn ascii_with_label_and_extra_elements() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\n\
                    element vertex 2\nproperty double x\nproperty double y\n\
                    property double z\nproperty float intensity\nproperty uchar red\n\
                    property uchar green\nproperty uchar blue\nproperty ushort label\n\
                    element face 1\nproperty list uchar int vertex_indices\nend_header\n\
                    1 2 3 0.5 10 20 30 4\n4 5 6 0.7 40 50 60 9\n3 0 1 1\n";
        let cloud = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(cloud.gt_labels().unwrap(), &[4, 9]);
        assert_eq!(cloud.colors().unwrap()[1], [40, 50, 60]);
    }

    #[test]
    fn missing_z_is_a_format_error() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n\
                    property float y\nend_header\n0 0\n";
        assert!(matches!(parse_ply(text.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_coordinate_names_vertex() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\n\
                    property float y\nproperty float z\nend_header\n0 0 0\n1 nan 0\n";
        match parse_ply(text.as_bytes()) {
            Err(Error::Data(m)) => assert!(m.contains("vertex 1"), "{m}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn big_endian_is_rejected() {
        let text = "ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\n\
                    property float y\nproperty float z\nend_header\n";
        assert!(matches!(parse_ply(text.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_binary_body() {
        let cloud = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)], None, None).unwrap();
        let mut bytes = encode_ply(&cloud, Some(&[1]), &labels()).unwrap();
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(parse_ply(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn label_validation_on_save() {
        let cloud = PointCloud::new(vec![Vec3::zeros(); 2], None, None).unwrap();
        assert!(matches!(
            encode_ply(&cloud, Some(&[1]), &labels()),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            encode_ply(&cloud, Some(&[1, 10]), &labels()),
            Err(Error::Argument(_))
        ));
        assert!(encode_ply(&cloud, Some(&[1, 9]), &labels()).is_ok());
    }

    #[test]
    fn empty_cloud_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ply");
        save_cloud(&PointCloud::empty(), Some(&[]), &labels(), &path).unwrap();
        let back = load_cloud(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.gt_labels().unwrap().len(), 0);
    }

    #[test]
    fn label_column_is_optional() {
        let cloud = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)], Some(vec![[1, 2, 3]]), None).unwrap();
        let bytes = encode_ply(&cloud, None, &labels()).unwrap();
        assert!(!String::from_utf8_lossy(&bytes).contains("label"));
        assert_eq!(parse_ply(&bytes).unwrap(), cloud);
    }

    #[test]
    fn float32_binary_input_round_trips_bit_exact() {
        // Hand-built float32 binary file, loaded, saved as double, reloaded.
        let pts: [[f32; 3]; 2] = [[0.1, -3.3, 1e7], [f32::MIN_POSITIVE, 2.5, -0.0]];
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n\
            property float x\nproperty float y\nproperty float z\nproperty ushort label\nend_header\n"
            .to_vec();
        for (i, p) in pts.iter().enumerate() {
            for v in p {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.extend_from_slice(&(i as u16 + 1).to_le_bytes());
        }
        let cloud = parse_ply(&bytes).unwrap();
        let encoded = encode_ply(&cloud, cloud.gt_labels(), &labels()).unwrap();
        let back = parse_ply(&encoded).unwrap();
        for (p, q) in pts.iter().zip(back.positions()) {
            for k in 0..3 {
                assert_eq!((p[k] as f64).to_bits(), q[k].to_bits());
            }
        }
        assert_eq!(back.gt_labels().unwrap(), &[1, 2]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn save_load_is_identity(
            points in prop::collection::vec(
                (prop::array::uniform3(-1e6f64..1e6), prop::array::uniform3(any::<u8>()), 0u16..10),
                0..300,
            ),
            with_color in any::<bool>(),
        ) {
            let positions = points.iter().map(|(p, _, _)| Vec3::from(*p)).collect();
            let colors = with_color.then(|| points.iter().map(|(_, c, _)| *c).collect());
            let labels_in: Vec<ClassId> = points.iter().map(|(_, _, l)| *l).collect();
            let cloud = PointCloud::new(positions, colors, None).unwrap();
            let back = parse_ply(&encode_ply(&cloud, Some(&labels_in), &labels()).unwrap()).unwrap();
            prop_assert_eq!(back.len(), cloud.len());
            for (a, b) in cloud.positions().iter().zip(back.positions()) {
                for k in 0..3 {
                    prop_assert_eq!(a[k].to_bits(), b[k].to_bits());
                }
            }
            prop_assert_eq!(back.colors(), cloud.colors());
            prop_assert_eq!(back.gt_labels().unwrap(), labels_in.as_slice());
        }
    }
}
