//! Canonical on-disk layout:
//!
//! ```text
//! root/intrinsics.txt                         "fx fy"
//! root/subject_XX/seq_YY/frame_NNNNN_depth.png   16-bit depth, mm (0 = invalid)
//! root/subject_XX/seq_YY/frame_NNNNN_gray.png    8-bit gray (optional)
//! root/subject_XX/seq_YY/frame_NNNNN_pose.txt    3 rows of the head rotation, then "x y z" head centre (mm)
//! root/subject_XX/seq_YY/frame_NNNNN_joints.txt  left shoulder, right shoulder, spine base (mm), one per line
//! ```
//!
//! Head rotations follow the `Rz(yaw) * Ry(pitch) * Rx(roll)` convention of
//! [`crate::geometry`]; the principal point is taken at the frame centre.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use nalgebra::{Matrix3, Vector3};

use super::{DataError, DatasetFormat, FrameRecord};
use crate::geometry::{euler_to_rotation, rotation_to_euler, shoulder_rotation, CameraIntrinsics, SkeletonJoints};
use crate::image::{DepthFrame, GrayFrame, Image};

const INTRINSICS_FILE: &str = "intrinsics.txt";

fn sorted_dirs(dir: &Path, prefix: &str) -> Result<Vec<(String, PathBuf)>, DataError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let entry = entry.map_err(|e| DataError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_prefix(prefix) {
            if entry.path().is_dir() {
                out.push((id.to_string(), entry.path()));
            }
        }
    }
    let mut ids: Vec<String> = out.iter().map(|(id, _)| id.clone()).collect();
    super::sort_subject_ids(&mut ids);
    Ok(ids.into_iter().map(|id| {
        let path = out.iter().find(|(i, _)| *i == id).unwrap().1.clone();
        (id, path)
    }).collect())
}

fn frame_indices(dir: &Path) -> Result<Vec<u32>, DataError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let entry = entry.map_err(|e| DataError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(num) = name.strip_prefix("frame_").and_then(|n| n.strip_suffix("_depth.png")) {
            let idx = num
                .parse::<u32>()
                .map_err(|_| DataError::format(entry.path(), "frame number is not an integer"))?;
            out.push(idx);
        }
    }
    out.sort_unstable();
    if out.windows(2).any(|w| w[0] == w[1]) {
        return Err(DataError::format(dir, "duplicate frame numbers"));
    }
    Ok(out)
}

fn frame_path(dir: &Path, index: u32, suffix: &str) -> PathBuf {
    dir.join(format!("frame_{index:05}_{suffix}"))
}

fn parse_numbers(path: &Path, text: &str, rows: usize) -> Result<Vec<[f64; 3]>, DataError> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != rows {
        return Err(DataError::format(path, format!("expected {rows} lines, found {}", lines.len())));
    }
    lines
        .iter()
        .map(|line| {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| DataError::format(path, format!("bad number: {e}")))?;
            let arr: [f64; 3] = vals
                .try_into()
                .map_err(|_| DataError::format(path, "expected 3 values per line"))?;
            if arr.iter().all(|v| v.is_finite()) {
                Ok(arr)
            } else {
                Err(DataError::format(path, "non-finite value"))
            }
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

fn read_intrinsics(root: &Path) -> Result<CameraIntrinsics, DataError> {
    let path = root.join(INTRINSICS_FILE);
    if !path.is_file() {
        return Err(DataError::MissingIntrinsics(path));
    }
    let text = read_text(&path)?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| DataError::format(&path, format!("bad number: {e}")))?;
    match vals[..] {
        [fx, fy] => CameraIntrinsics::new(fx, fy).map_err(|e| DataError::format(&path, e.to_string())),
        _ => Err(DataError::format(&path, "expected \"fx fy\"")),
    }
}

fn read_depth(path: &Path) -> Result<DepthFrame, DataError> {
    let img = image::open(path).map_err(|e| DataError::format(path, e.to_string()))?;
    let luma = match img {
        image::DynamicImage::ImageLuma16(buf) => buf,
        other => return Err(DataError::format(path, format!("expected 16-bit gray depth, found {:?}", other.color()))),
    };
    let (w, h) = luma.dimensions();
    if w == 0 || h == 0 {
        return Err(DataError::format(path, "empty depth image"));
    }
    Ok(DepthFrame(Image::from_vec(w as usize, h as usize, luma.into_raw().into_iter().map(f32::from).collect())))
}

fn read_gray(path: &Path) -> Result<GrayFrame, DataError> {
    let img = image::open(path).map_err(|e| DataError::format(path, e.to_string()))?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    Ok(GrayFrame(Image::from_vec(w as usize, h as usize, luma.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())))
}

fn read_frame(
    dir: &Path,
    subject: &str,
    sequence: &str,
    index: u32,
    intrinsics: CameraIntrinsics,
    format: DatasetFormat,
) -> Result<FrameRecord, DataError> {
    let depth = read_depth(&frame_path(dir, index, "depth.png"))?;
    let require = |path: &Path, what: &str| -> Result<(), DataError> {
        if path.is_file() {
            Ok(())
        } else {
            Err(DataError::format(path, format!("{what} file required by the {format:?} format is missing")))
        }
    };

    let gray_path = frame_path(dir, index, "gray.png");
    let pose_path = frame_path(dir, index, "pose.txt");
    let joints_path = frame_path(dir, index, "joints.txt");
    if format == DatasetFormat::Synthetic {
        require(&gray_path, "gray")?;
        require(&pose_path, "pose")?;
    }
    if matches!(format, DatasetFormat::Synthetic | DatasetFormat::PandoraLike) {
        require(&joints_path, "joints")?;
    }

    let gray = if gray_path.is_file() {
        let g = read_gray(&gray_path)?;
        if (g.0.width(), g.0.height()) != (depth.width(), depth.height()) {
            return Err(DataError::format(&gray_path, "gray and depth sizes differ"));
        }
        Some(g)
    } else {
        None
    };

    let (mut head_pose, mut head_center_3d, mut head_center_2d) = (None, None, None);
    if pose_path.is_file() {
        let rows = parse_numbers(&pose_path, &read_text(&pose_path)?, 4)?;
        let r = Matrix3::from_rows(&[
            Vector3::from(rows[0]).transpose(),
            Vector3::from(rows[1]).transpose(),
            Vector3::from(rows[2]).transpose(),
        ]);
        let euler = rotation_to_euler(&r).map_err(|_| DataError::format(&pose_path, "head rotation is not orthonormal"))?;
        head_pose = Some(euler.angles);
        let c = Vector3::from(rows[3]);
        if c.z <= 0.0 {
            return Err(DataError::format(&pose_path, "head centre must be in front of the camera"));
        }
        head_center_3d = Some(rows[3]);
        head_center_2d = Some(intrinsics.project(&c, depth.width(), depth.height()));
    }

    let (mut joints, mut shoulder_pose) = (None, None);
    if joints_path.is_file() {
        let rows = parse_numbers(&joints_path, &read_text(&joints_path)?, 3)?;
        let j = SkeletonJoints { left_shoulder: rows[0], right_shoulder: rows[1], spine_base: rows[2] };
        let frame = shoulder_rotation(&j).map_err(|e| DataError::format(&joints_path, e.to_string()))?;
        let euler = rotation_to_euler(&frame.rotation).map_err(|e| DataError::format(&joints_path, e.to_string()))?;
        joints = Some(j);
        shoulder_pose = Some(euler.angles);
    }

    Ok(FrameRecord {
        subject_id: subject.to_string(),
        sequence_id: sequence.to_string(),
        frame_index: index,
        depth,
        gray,
        head_center_2d,
        head_center_3d,
        joints,
        head_pose,
        shoulder_pose,
        intrinsics,
    })
}

/// Loads every frame under `root`, sorted by (subject, sequence, frame).
pub fn load_dataset(root: &Path, format: DatasetFormat) -> Result<Vec<FrameRecord>, DataError> {
    if !root.is_dir() {
        return Err(DataError::format(root, "dataset root is not a directory"));
    }
    let subjects = sorted_dirs(root, "subject_")?;
    if subjects.is_empty() {
        return Err(DataError::format(root, "no subject_* directories"));
    }
    let intrinsics = read_intrinsics(root)?;
    let mut records = Vec::new();
    for (subject, sdir) in subjects {
        for (sequence, qdir) in sorted_dirs(&sdir, "seq_")? {
            for index in frame_indices(&qdir)? {
                records.push(read_frame(&qdir, &subject, &sequence, index, intrinsics, format)?);
            }
        }
    }
    if records.is_empty() {
        return Err(DataError::format(root, "no frame_*_depth.png files"));
    }
    Ok(records)
}

fn write_text(path: &Path, text: String) -> Result<(), DataError> {
    fs::write(path, text).map_err(|e| DataError::io(path, e))
}

fn save_png<P: image::PixelWithColorType>(path: &Path, buf: ImageBuffer<P, Vec<P::Subpixel>>) -> Result<(), DataError>
where
    [P::Subpixel]: image::EncodableLayout,
    P: image::Pixel,
{
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => DataError::io(path, io),
        other => DataError::format(path, other.to_string()),
    })
}

fn fmt3(v: &[f64; 3]) -> String {
    format!("{} {} {}\n", v[0], v[1], v[2])
}

/// Writes one frame's files (creating its directory).
pub fn write_frame(root: &Path, record: &FrameRecord) -> Result<(), DataError> {
    let dir = root.join(format!("subject_{}", record.subject_id)).join(format!("seq_{}", record.sequence_id));
    fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
    let d = record.depth.image();
    let raw: Vec<u16> = d.data().iter().map(|v| v.round().clamp(0.0, u16::MAX as f32) as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(d.width() as u32, d.height() as u32, raw).expect("buffer sized from image");
    save_png(&frame_path(&dir, record.frame_index, "depth.png"), buf)?;

    if let Some(gray) = &record.gray {
        let g = gray.image();
        let raw: Vec<u8> = g.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(g.width() as u32, g.height() as u32, raw).expect("buffer sized from image");
        save_png(&frame_path(&dir, record.frame_index, "gray.png"), buf)?;
    }
    if let (Some(pose), Some(center)) = (record.head_pose, record.head_center_3d) {
        let r = euler_to_rotation(&pose);
        let mut text = String::new();
        for i in 0..3 {
            text += &fmt3(&[r[(i, 0)], r[(i, 1)], r[(i, 2)]]);
        }
        text += &fmt3(&center);
        write_text(&frame_path(&dir, record.frame_index, "pose.txt"), text)?;
    }
    if let Some(j) = &record.joints {
        let text = fmt3(&j.left_shoulder) + &fmt3(&j.right_shoulder) + &fmt3(&j.spine_base);
        write_text(&frame_path(&dir, record.frame_index, "joints.txt"), text)?;
    }
    Ok(())
}

/// Writes `intrinsics.txt` (from the first record) and every frame.
pub fn write_dataset(root: &Path, records: &[FrameRecord]) -> Result<(), DataError> {
    fs::create_dir_all(root).map_err(|e| DataError::io(root, e))?;
    if let Some(first) = records.first() {
        write_text(&root.join(INTRINSICS_FILE), format!("{} {}\n", first.intrinsics.fx, first.intrinsics.fy))?;
    }
    records.iter().try_for_each(|r| write_frame(root, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path(), DatasetFormat::BiwiLike).unwrap_err();
        assert!(matches!(err, DataError::Format { .. }));
    }

    #[test]
    fn missing_intrinsics() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("subject_01/seq_00")).unwrap();
        let err = load_dataset(dir.path(), DatasetFormat::BiwiLike).unwrap_err();
        assert!(matches!(err, DataError::MissingIntrinsics(_)));
    }

    #[test]
    fn corrupt_depth_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("subject_01/seq_00");
        fs::create_dir_all(&seq).unwrap();
        fs::write(dir.path().join("intrinsics.txt"), "500 500\n").unwrap();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(2, 2, vec![800; 4]).unwrap();
        buf.save(seq.join("frame_00000_depth.png")).unwrap();
        fs::write(seq.join("frame_00001_depth.png"), b"not a png").unwrap();
        match load_dataset(dir.path(), DatasetFormat::BiwiLike).unwrap_err() {
            DataError::Format { path, .. } => assert!(path.ends_with("frame_00001_depth.png")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pandora_requires_joints() {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("subject_01/seq_00");
        fs::create_dir_all(&seq).unwrap();
        fs::write(dir.path().join("intrinsics.txt"), "500 500\n").unwrap();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(2, 2, vec![800; 4]).unwrap();
        buf.save(seq.join("frame_00000_depth.png")).unwrap();
        assert_eq!(load_dataset(dir.path(), DatasetFormat::BiwiLike).unwrap().len(), 1);
        assert!(load_dataset(dir.path(), DatasetFormat::PandoraLike).is_err());
    }
}
