//! Wavefront OBJ/MTL subset: `v`, `vt`, `vn`, `f`, `mtllib`, `usemtl`, and the
//! MTL keys `Kd`, `d`, `map_Kd`, `map_Ks` (packed ORM), `map_bump`/`bump`
//! (tangent-space normal map), `map_d` (alpha) and `disp`.
//!
//! Vertex normals are accepted and ignored; normals are always recomputed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::Mesh;

/// Texture references and constants of the first material in an MTL file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MtlInfo {
    pub name: String,
    pub kd: Option<[f64; 3]>,
    pub d: Option<f64>,
    pub map_kd: Option<PathBuf>,
    pub map_orm: Option<PathBuf>,
    pub map_normal: Option<PathBuf>,
    pub map_alpha: Option<PathBuf>,
    pub map_disp: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ObjData {
    pub mesh: Mesh<f64>,
    pub material: Option<MtlInfo>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn floats<'a>(it: impl Iterator<Item = &'a str>, path: &Path, line: usize) -> Result<Vec<f64>> {
    it.map(|t| t.parse::<f64>().map_err(|_| parse_err(path, line, format!("bad number `{t}`"))))
        .collect()
}

/// Resolves a 1-based or negative OBJ index against `count` elements.
fn resolve(tok: &str, count: usize, what: &str, path: &Path, line: usize) -> Result<usize> {
    let i: i64 = tok.parse().map_err(|_| parse_err(path, line, format!("bad {what} index `{tok}`")))?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        -1
    };
    if idx < 0 || idx >= count as i64 {
        return Err(parse_err(path, line, format!("{what} index {i} out of range ({count} defined)")));
    }
    Ok(idx as usize)
}

/// Parses OBJ text. Quads are split into a fan; larger polygons are rejected
/// unless `fan` is set.
pub fn parse_obj(text: &str, path: &Path, fan: bool) -> Result<(Mesh<f64>, Option<String>)> {
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut normals = 0usize;
    let mut faces = Vec::new();
    let mut uv_faces = Vec::new();
    let mut with_uv: Option<bool> = None;
    let mut mtllib = None;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        let Some(key) = toks.next() else { continue };
        match key {
            "v" => {
                let v = floats(toks, path, line)?;
                if !(3..=4).contains(&v.len()) {
                    return Err(parse_err(path, line, "vertex needs 3 coordinates"));
                }
                positions.extend_from_slice(&v[..3]);
            }
            "vt" => {
                let v = floats(toks, path, line)?;
                if !(2..=3).contains(&v.len()) {
                    return Err(parse_err(path, line, "texture coordinate needs 2 components"));
                }
                uvs.extend_from_slice(&v[..2]);
            }
            "vn" => {
                if floats(toks, path, line)?.len() != 3 {
                    return Err(parse_err(path, line, "normal needs 3 components"));
                }
                normals += 1;
            }
            "f" => {
                let mut pv = Vec::new();
                let mut tv = Vec::new();
                for corner in toks {
                    let mut parts = corner.split('/');
                    let p = parts.next().unwrap_or("");
                    pv.push(resolve(p, positions.len() / 3, "vertex", path, line)?);
                    match parts.next() {
                        Some(t) if !t.is_empty() => tv.push(resolve(t, uvs.len() / 2, "uv", path, line)?),
                        _ => {}
                    }
                    if let Some(nrm) = parts.next() {
                        if !nrm.is_empty() {
                            resolve(nrm, normals, "normal", path, line)?;
                        }
                    }
                }
                if pv.len() < 3 {
                    return Err(parse_err(path, line, "face needs at least 3 vertices"));
                }
                if pv.len() > 4 && !fan {
                    return Err(parse_err(path, line, format!("{}-gon faces need fan triangulation", pv.len())));
                }
                let has_uv = !tv.is_empty();
                if has_uv && tv.len() != pv.len() {
                    return Err(parse_err(path, line, "face mixes corners with and without uvs"));
                }
                if *with_uv.get_or_insert(has_uv) != has_uv {
                    return Err(parse_err(path, line, "some faces have uvs and others do not"));
                }
                for k in 1..pv.len() - 1 {
                    faces.push([pv[0], pv[k], pv[k + 1]]);
                    if has_uv {
                        uv_faces.push([tv[0], tv[k], tv[k + 1]]);
                    }
                }
            }
            "mtllib" => mtllib = Some(content["mtllib".len()..].trim().to_string()),
            "usemtl" | "o" | "g" | "s" => {}
            other => log::debug!("{}:{line}: ignoring `{other}`", path.display()),
        }
    }
    if !with_uv.unwrap_or(false) {
        uvs.clear();
    }
    let mesh = Mesh::new(positions, faces).with_uvs(uvs, uv_faces);
    mesh.validate()?;
    Ok((mesh, mtllib))
}

pub fn parse_mtl(text: &str, path: &Path) -> Result<Option<MtlInfo>> {
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut m: Option<MtlInfo> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        let Some(key) = toks.next() else { continue };
        if key == "newmtl" {
            if m.is_some() {
                log::warn!("{}:{line}: only the first material is used", path.display());
                break;
            }
            m = Some(MtlInfo { name: toks.collect::<Vec<_>>().join(" "), ..Default::default() });
            continue;
        }
        let Some(mat) = m.as_mut() else {
            return Err(parse_err(path, line, format!("`{key}` before newmtl")));
        };
        // texture options precede the file name, which is the last token
        let file = || {
            content
                .split_whitespace()
                .last()
                .filter(|_| content.split_whitespace().count() > 1)
                .map(|f| dir.join(f))
                .ok_or_else(|| parse_err(path, line, format!("`{key}` needs a file name")))
        };
        match key {
            "Kd" => {
                let v = floats(toks, path, line)?;
                if v.len() != 3 {
                    return Err(parse_err(path, line, "Kd needs 3 components"));
                }
                mat.kd = Some([v[0], v[1], v[2]]);
            }
            "d" => {
                let v = floats(toks, path, line)?;
                mat.d = Some(*v.first().ok_or_else(|| parse_err(path, line, "d needs a value"))?);
            }
            "map_Kd" => mat.map_kd = Some(file()?),
            "map_Ks" => mat.map_orm = Some(file()?),
            "map_bump" | "bump" | "map_Bump" | "norm" => mat.map_normal = Some(file()?),
            "map_d" => mat.map_alpha = Some(file()?),
            "disp" => mat.map_disp = Some(file()?),
            _ => {}
        }
    }
    Ok(m)
}

/// Loads an OBJ file and the first material of its MTL library, if any.
pub fn load_obj(path: &Path, fan: bool) -> Result<ObjData> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    let (mesh, mtllib) = parse_obj(&text, path, fan)?;
    let material = match mtllib {
        Some(lib) => {
            let mtl_path = path.parent().unwrap_or(Path::new("")).join(lib);
            let text = std::fs::read_to_string(&mtl_path).map_err(|_| Error::MissingFile(mtl_path.clone()))?;
            parse_mtl(&text, &mtl_path)?
        }
        None => None,
    };
    Ok(ObjData { mesh, material })
}

/// OBJ text for `mesh`; numbers use the shortest exact representation.
pub fn obj_text(mesh: &Mesh<f64>, mtllib: Option<&str>, material: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(lib) = mtllib {
        let _ = writeln!(s, "mtllib {lib}");
    }
    for p in mesh.positions.chunks_exact(3) {
        let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
    }
    for t in mesh.uvs.chunks_exact(2) {
        let _ = writeln!(s, "vt {} {}", t[0], t[1]);
    }
    if let Some(m) = material {
        let _ = writeln!(s, "usemtl {m}");
    }
    for (i, f) in mesh.faces.iter().enumerate() {
        if mesh.has_uvs() {
            let t = mesh.uv_faces[i];
            let _ = writeln!(s, "f {}/{} {}/{} {}/{}", f[0] + 1, t[0] + 1, f[1] + 1, t[1] + 1, f[2] + 1, t[2] + 1);
        } else {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
    }
    s
}

pub fn mtl_text(m: &MtlInfo) -> String {
    let mut s = format!("newmtl {}\n", m.name);
    let name = |p: &Path| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    if let Some(kd) = m.kd {
        let _ = writeln!(s, "Kd {} {} {}", kd[0], kd[1], kd[2]);
    }
    if let Some(d) = m.d {
        let _ = writeln!(s, "d {d}");
    }
    for (key, p) in [
        ("map_Kd", &m.map_kd),
        ("map_d", &m.map_alpha),
        ("map_Ks", &m.map_orm),
        ("map_bump", &m.map_normal),
        ("disp", &m.map_disp),
    ] {
        if let Some(p) = p {
            let _ = writeln!(s, "{key} {}", name(p));
        }
    }
    s
}

/// Writes `<dir>/<name>.obj` and, when given, `<dir>/<name>.mtl`.
pub fn save_obj(dir: &Path, name: &str, mesh: &Mesh<f64>, material: Option<&MtlInfo>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let obj = dir.join(format!("{name}.obj"));
    let mtl_name = format!("{name}.mtl");
    let text = obj_text(mesh, material.map(|_| mtl_name.as_str()), material.map(|m| m.name.as_str()));
    std::fs::write(&obj, text)?;
    if let Some(m) = material {
        std::fs::write(dir.join(&mtl_name), mtl_text(m))?;
    }
    Ok(obj)
}
