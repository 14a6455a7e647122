//! Network inputs cut from a frame: the 64×64 head crops (depth, gray)
//! and the shoulder crop. Training and inference share these functions.

use crate::dataio::{preprocess, FrameRecord};
use crate::geometry::{head_crop_box, shoulder_crop_box, CropBox, GeometryError};
use crate::image::Image;

pub const CROP_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadCrops {
    pub bbox: CropBox,
    /// Normalised depth crop.
    pub depth: Image,
    /// Gray crop mapped to `[-1, 1]`, when the record has a gray frame.
    pub gray: Option<Image>,
}

pub fn head_crops(record: &FrameRecord, center: (f64, f64), extent_mm: (f64, f64)) -> Result<HeadCrops, GeometryError> {
    let bbox = head_crop_box(center, &record.intrinsics, &record.depth, extent_mm)?;
    let depth = preprocess(&record.depth.image().crop_padded(&bbox).resize(CROP_SIZE, CROP_SIZE));
    let gray = record
        .gray
        .as_ref()
        .map(|g| g.image().crop_padded(&bbox).resize(CROP_SIZE, CROP_SIZE).map(|v| 2.0 * v - 1.0));
    Ok(HeadCrops { bbox, depth, gray })
}

/// Normalised depth crop of the shoulder region below a head box.
pub fn shoulder_crop(
    record: &FrameRecord,
    head: &CropBox,
    extent_mm: (f64, f64),
) -> Result<(CropBox, Image), GeometryError> {
    let bbox = shoulder_crop_box(head, &record.intrinsics, &record.depth, extent_mm)?;
    Ok((bbox, preprocess(&record.depth.image().crop_padded(&bbox).resize(CROP_SIZE, CROP_SIZE))))
}

/// Maps a `[-1, 1]` generator image back to `[0, 1]` gray.
pub fn to_unit_gray(image: &Image) -> Image {
    image.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
}
