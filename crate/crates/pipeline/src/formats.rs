//! Readers and writers for the project's on-disk formats.
//!
//! - Mesh: ASCII OBJ with `v`, triangular `f` and optional `o` group names.
//! - Map points: ASCII PLY with x/y/z, `source_keyframe` and `point_index`.
//! - Keyframes: JSON array of `{id, image, pose{qw..tz}, direction}`.
//! - Intrinsics: JSON `{fx, fy, cx, cy, width, height}`.
//! - Measurements: CSV, raw records or per-sample summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use asbuilt_core::geometry::{CameraIntrinsics, PoseDirection, RigidPose, TriangleMesh, Vec3};
use asbuilt_core::raster::RgbImage;
use asbuilt_core::spatial::{Keyframe, KeyframeId, MapPoint};
use asbuilt_core::texturing::{Texture, TextureAtlas};
use nalgebra::{Quaternion, UnitQuaternion};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

fn display_name(path: &Path) -> String {
    path.display().to_string()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::parse(display_name(path), Some(e.line()), e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("project types serialize");
    text.push('\n');
    write_bytes(path, text)
}

// ---------------------------------------------------------------- OBJ

/// Parses the OBJ subset. Faces before any `o`/`g` line are ungrouped;
/// repeated group names refer to the same group.
pub fn parse_obj(text: &str, file: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut groups: Vec<String> = Vec::new();
    let mut triangle_groups = Vec::new();
    let mut current: Option<usize> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let err = |m: String| PipelineError::parse(file, Some(line), m);
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let xyz: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad vertex coordinate {t:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if xyz.len() != 3 {
                    return Err(err("vertex needs 3 coordinates".into()));
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|e| err(format!("bad face index {t:?}: {e}")))?;
                        let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        if resolved < 0 || resolved as usize >= vertices.len() {
                            return Err(err(format!("face index {i} out of range")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(err(format!("only triangular faces are supported, got {} vertices", idx.len())));
                }
                triangles.push([idx[0], idx[1], idx[2]]);
                triangle_groups.push(current);
            }
            Some("o") | Some("g") => {
                let name = tokens.collect::<Vec<_>>().join(" ");
                if name.is_empty() {
                    return Err(err("group line without a name".into()));
                }
                current = Some(match groups.iter().position(|g| *g == name) {
                    Some(i) => i,
                    None => {
                        groups.push(name);
                        groups.len() - 1
                    }
                });
            }
            _ => {}
        }
    }
    let mut mesh = TriangleMesh::new(vertices, triangles).map_err(|e| PipelineError::parse(file, None, e.to_string()))?;
    if !groups.is_empty() {
        mesh.groups = groups;
        mesh.triangle_groups = triangle_groups;
    }
    Ok(mesh)
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    parse_obj(&read_text(path)?, &display_name(path))
}

pub fn format_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    let mut current = None;
    for (i, t) in mesh.triangles.iter().enumerate() {
        let group = mesh.group_of(i);
        if group != current {
            if let Some(name) = group {
                let _ = writeln!(out, "o {name}");
            }
            current = group;
        }
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

// ---------------------------------------------------------------- PLY

pub fn parse_ply(text: &str, file: &str) -> Result<Vec<MapPoint>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let err = |line: usize, m: String| PipelineError::parse(file, Some(line), m);
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(1, "missing `ply` magic".into())),
    }
    let mut count = None;
    let mut props: Vec<(String, String)> = Vec::new();
    let mut in_vertex = false;
    let mut header_end = None;
    for (line, l) in lines.by_ref() {
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(err(line, format!("unsupported format {other:?}, expected ascii"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| err(line, format!("bad vertex count: {e}")))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] if in_vertex => return Err(err(line, "list properties are not supported".into())),
            ["property", ty, name] if in_vertex => props.push((ty.to_string(), name.to_string())),
            ["property", ..] => {}
            ["end_header"] => {
                header_end = Some(line);
                break;
            }
            _ => return Err(err(line, format!("unexpected header line {l:?}"))),
        }
    }
    let header_end = header_end.ok_or_else(|| PipelineError::parse(file, None, "missing end_header"))?;
    let count = count.ok_or_else(|| err(header_end, "no vertex element".into()))?;
    let column = |name: &str| {
        props
            .iter()
            .position(|(_, n)| n == name)
            .ok_or_else(|| err(header_end, format!("missing vertex property {name:?}")))
    };
    let cols = [column("x")?, column("y")?, column("z")?, column("source_keyframe")?, column("point_index")?];
    let single = |c: usize| matches!(props[c].0.as_str(), "float" | "float32");

    let mut points = Vec::with_capacity(count);
    for (line, l) in lines {
        if points.len() == count {
            if !l.is_empty() {
                return Err(err(line, "more vertices than declared".into()));
            }
            continue;
        }
        let tokens: Vec<&str> = l.split_whitespace().collect();
        if tokens.len() != props.len() {
            return Err(err(line, format!("expected {} values, got {}", props.len(), tokens.len())));
        }
        let coord = |c: usize| -> Result<f64> {
            let t = tokens[c];
            if single(c) {
                t.parse::<f32>().map(f64::from).map_err(|e| err(line, format!("bad {}: {e}", props[c].1)))
            } else {
                t.parse::<f64>().map_err(|e| err(line, format!("bad {}: {e}", props[c].1)))
            }
        };
        let int = |c: usize| -> Result<u64> {
            tokens[c].parse::<u64>().map_err(|e| err(line, format!("bad {}: {e}", props[c].1)))
        };
        let source = int(cols[3])?;
        points.push(MapPoint {
            position: Vec3::new(coord(cols[0])?, coord(cols[1])?, coord(cols[2])?),
            source_keyframe: KeyframeId::try_from(source)
                .map_err(|_| err(line, format!("source_keyframe {source} out of range")))?,
            index: int(cols[4])? as usize,
        });
    }
    if points.len() != count {
        return Err(PipelineError::parse(file, None, format!("declared {count} vertices, found {}", points.len())));
    }
    Ok(points)
}

pub fn read_ply(path: &Path) -> Result<Vec<MapPoint>> {
    parse_ply(&read_text(path)?, &display_name(path))
}

/// Coordinates are written as 32-bit floats, as declared in the header.
pub fn format_ply(points: &[MapPoint]) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property int source_keyframe\nproperty int point_index\nend_header\n",
        points.len()
    );
    for p in points {
        let v = p.position.map(|c| c as f32);
        let _ = writeln!(out, "{} {} {} {} {}", v.x, v.y, v.z, p.source_keyframe, p.index);
    }
    out
}

// ---------------------------------------------------------------- keyframes

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRecord {
    pub id: KeyframeId,
    pub image: String,
    pub pose: PoseRecord,
    #[serde(default = "default_direction")]
    pub direction: PoseDirection,
}

fn default_direction() -> PoseDirection {
    PoseDirection::WorldToCamera
}

impl KeyframeRecord {
    pub fn from_keyframe(kf: &Keyframe) -> Self {
        let q = kf.pose.rotation.quaternion();
        let t = kf.pose.translation;
        Self {
            id: kf.id,
            image: kf.image.clone(),
            pose: PoseRecord { qw: q.w, qx: q.i, qy: q.j, qz: q.k, tx: t.x, ty: t.y, tz: t.z },
            direction: kf.pose.direction,
        }
    }

    pub fn to_keyframe(&self, intrinsics: CameraIntrinsics) -> Result<Keyframe, String> {
        let p = &self.pose;
        let q = Quaternion::new(p.qw, p.qx, p.qy, p.qz);
        if !q.norm().is_finite() || (q.norm() - 1.0).abs() > 1e-6 {
            return Err(format!("keyframe {}: quaternion norm {} is not 1", self.id, q.norm()));
        }
        Ok(Keyframe {
            id: self.id,
            pose: RigidPose::new(UnitQuaternion::from_quaternion(q), Vec3::new(p.tx, p.ty, p.tz), self.direction),
            image: self.image.clone(),
            intrinsics,
        })
    }
}

pub fn read_keyframes(path: &Path, intrinsics: CameraIntrinsics) -> Result<Vec<Keyframe>> {
    let records: Vec<KeyframeRecord> = read_json(path)?;
    records
        .iter()
        .map(|r| r.to_keyframe(intrinsics).map_err(|m| PipelineError::parse(display_name(path), None, m)))
        .collect()
}

pub fn write_keyframes(path: &Path, keyframes: &[Keyframe]) -> Result<()> {
    let records: Vec<KeyframeRecord> = keyframes.iter().map(KeyframeRecord::from_keyframe).collect();
    write_json(path, &records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct IntrinsicsRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let r: IntrinsicsRecord = read_json(path)?;
    CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
        .map_err(|e| PipelineError::parse(display_name(path), None, e.to_string()))
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    let r = IntrinsicsRecord { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, width: k.width, height: k.height };
    write_json(path, &r)
}

// ---------------------------------------------------------------- CSV

/// One measured distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub method: String,
    pub window_id: String,
    pub dimension: String,
    pub measured_m: f64,
    pub actual_m: f64,
}

/// Published summary of one (method, dimension) sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub method: String,
    pub dimension: String,
    pub mean_m: f64,
    pub sd_m: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalInput {
    Raw(Vec<MeasurementRecord>),
    Summary(Vec<SummaryRecord>),
}

/// Reads either CSV layout, chosen by its header.
pub fn read_eval_csv(path: &Path) -> Result<EvalInput> {
    let text = read_text(path)?;
    let file = display_name(path);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| PipelineError::parse(&file, Some(1), e.to_string()))?.clone();
    let has = |h: &str| headers.iter().any(|x| x == h);
    fn rows<T: DeserializeOwned>(reader: &mut csv::Reader<&[u8]>, file: &str) -> Result<Vec<T>> {
        reader
            .deserialize()
            .map(|r| {
                r.map_err(|e: csv::Error| {
                    let line = e.position().map(|p| p.line() as usize);
                    PipelineError::parse(file, line, e.to_string())
                })
            })
            .collect()
    }
    if has("measured_m") {
        Ok(EvalInput::Raw(rows(&mut reader, &file)?))
    } else if has("mean_m") {
        Ok(EvalInput::Summary(rows(&mut reader, &file)?))
    } else {
        Err(PipelineError::parse(
            file,
            Some(1),
            "expected header method,window_id,dimension,measured_m,actual_m or method,dimension,mean_m,sd_m,n",
        ))
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| PipelineError::Io { path: path.into(), message: e.to_string() })?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Io { path: path.into(), message: e.to_string() })?;
    write_bytes(path, bytes)
}

// ---------------------------------------------------------------- images

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    decode_png(&bytes).map_err(|m| PipelineError::parse(display_name(path), None, m))
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, String> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| e.to_string())?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.pixels().map(|p| p.0).collect();
    RgbImage::new(w, h, data).map_err(|e| e.to_string())
}

fn png_bytes(width: u32, height: u32, color: image::ExtendedColorType, raw: &[u8]) -> Vec<u8> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(raw, width, height, color)
        .expect("buffer sizes match the image dimensions");
    out
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    png_bytes(img.width(), img.height(), image::ExtendedColorType::Rgb8, img.pixels().as_flattened())
}

pub fn encode_texture_png(tex: &Texture) -> Vec<u8> {
    png_bytes(tex.frame.width, tex.frame.height, image::ExtendedColorType::Rgba8, tex.rgba.as_flattened())
}

// ---------------------------------------------------------------- textured model

/// File name of a boundary's texture; non-alphanumeric characters become `_`.
pub fn texture_file_name(boundary: &str) -> String {
    let safe: String = boundary.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    format!("{safe}.png")
}

/// OBJ and MTL text for an atlas; each patch gets its own material.
pub fn format_textured_obj(atlas: &TextureAtlas, mtl_name: &str) -> (String, String) {
    let mut obj = format!("mtllib {mtl_name}\n");
    let mut mtl = String::new();
    let mut base = 0;
    for patch in &atlas.patches {
        let _ = writeln!(obj, "o {}", patch.boundary_id);
        let _ = writeln!(obj, "usemtl {}", patch.boundary_id);
        for v in &patch.vertices {
            let _ = writeln!(obj, "v {} {} {}", v.x, v.y, v.z);
        }
        for uv in &patch.uvs {
            let _ = writeln!(obj, "vt {} {}", uv[0], uv[1]);
        }
        for t in &patch.triangles {
            let [a, b, c] = t.map(|i| base + i + 1);
            let _ = writeln!(obj, "f {a}/{a} {b}/{b} {c}/{c}");
        }
        base += patch.vertices.len();
        let _ = writeln!(
            mtl,
            "newmtl {}\nKa 1 1 1\nKd 1 1 1\nd 1\nillum 1\nmap_Kd {}\n",
            patch.boundary_id,
            texture_file_name(&patch.boundary_id)
        );
    }
    (obj, mtl)
}
