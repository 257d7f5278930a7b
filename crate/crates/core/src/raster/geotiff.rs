//! Single-band float GeoTIFF I/O (north-up, PixelIsArea).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::Tag;

use super::{GridSpec, Raster, DEFAULT_NODATA};
use crate::crs::CrsId;
use crate::error::{Error, Result};

const MODEL_PIXEL_SCALE: u16 = 33550;
const MODEL_TIEPOINT: u16 = 33922;
const MODEL_TRANSFORMATION: u16 = 34264;
const GEO_KEY_DIRECTORY: u16 = 34735;
const GDAL_NODATA: u16 = 42113;

const GT_MODEL_TYPE: u16 = 1024;
const GT_RASTER_TYPE: u16 = 1025;
const GEOGRAPHIC_TYPE: u16 = 2048;
const PROJECTED_CS_TYPE: u16 = 3072;
const RASTER_PIXEL_IS_AREA: u16 = 1;

/// Writes `r` as a 32-bit float GeoTIFF. Values are rounded to `f32`.
pub fn write_geotiff(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let g = r.grid();
    let file = BufWriter::new(File::create(path.as_ref())?);
    let mut enc = TiffEncoder::new(file)?;
    let mut img = enc.new_image::<colortype::Gray32Float>(g.width as u32, g.height as u32)?;

    let dir = img.encoder();
    dir.write_tag(
        Tag::Unknown(MODEL_PIXEL_SCALE),
        &[g.gsd_x, -g.gsd_y, 0.0][..],
    )?;
    dir.write_tag(
        Tag::Unknown(MODEL_TIEPOINT),
        &[0.0, 0.0, 0.0, g.origin_x, g.origin_y, 0.0][..],
    )?;
    dir.write_tag(Tag::Unknown(GEO_KEY_DIRECTORY), &geo_keys(r.crs())[..])?;
    dir.write_tag(Tag::Unknown(GDAL_NODATA), &format!("{}", r.nodata())[..])?;

    let data: Vec<f32> = r.values().iter().map(|&v| v as f32).collect();
    img.write_data(&data)?;
    Ok(())
}

fn geo_keys(crs: Option<&CrsId>) -> Vec<u16> {
    let mut keys: Vec<[u16; 4]> = Vec::new();
    match crs.and_then(|c| c.epsg_code()) {
        Some(4326) => {
            keys.push([GT_MODEL_TYPE, 0, 1, 2]);
            keys.push([GT_RASTER_TYPE, 0, 1, RASTER_PIXEL_IS_AREA]);
            keys.push([GEOGRAPHIC_TYPE, 0, 1, 4326]);
        }
        Some(code) if code <= u16::MAX as u32 => {
            keys.push([GT_MODEL_TYPE, 0, 1, 1]);
            keys.push([GT_RASTER_TYPE, 0, 1, RASTER_PIXEL_IS_AREA]);
            keys.push([PROJECTED_CS_TYPE, 0, 1, code as u16]);
        }
        _ => keys.push([GT_RASTER_TYPE, 0, 1, RASTER_PIXEL_IS_AREA]),
    }
    let mut out = vec![1, 1, 0, keys.len() as u16];
    out.extend(keys.into_iter().flatten());
    out
}

fn crs_from_keys(keys: &[u16]) -> Option<CrsId> {
    if keys.len() < 4 {
        return None;
    }
    let n = keys[3] as usize;
    let entries = keys[4..].chunks_exact(4).take(n);
    let mut geographic = None;
    for e in entries {
        match e[0] {
            PROJECTED_CS_TYPE if e[1] == 0 && (1024..32767).contains(&e[3]) => {
                return Some(CrsId::epsg(e[3] as u32))
            }
            GEOGRAPHIC_TYPE if e[1] == 0 && (1024..32767).contains(&e[3]) => {
                geographic = Some(CrsId::epsg(e[3] as u32))
            }
            _ => {}
        }
    }
    geographic
}

pub fn read_geotiff(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let mut dec = Decoder::new(BufReader::new(File::open(path)?))?;
    let (w, h) = dec.dimensions()?;
    if dec.find_tag(Tag::Unknown(MODEL_TRANSFORMATION))?.is_some()
        && dec.find_tag(Tag::Unknown(MODEL_PIXEL_SCALE))?.is_none()
    {
        return Err(Error::input(format!(
            "{}: rotated/sheared geotransforms are not supported",
            path.display()
        )));
    }
    let scale = dec
        .find_tag(Tag::Unknown(MODEL_PIXEL_SCALE))?
        .ok_or_else(|| Error::input(format!("{}: missing ModelPixelScale tag", path.display())))?
        .into_f64_vec()?;
    let tie = dec
        .find_tag(Tag::Unknown(MODEL_TIEPOINT))?
        .ok_or_else(|| Error::input(format!("{}: missing ModelTiepoint tag", path.display())))?
        .into_f64_vec()?;
    if scale.len() < 2 || tie.len() < 6 {
        return Err(Error::input(format!(
            "{}: malformed georeferencing tags",
            path.display()
        )));
    }
    let crs = match dec.find_tag(Tag::Unknown(GEO_KEY_DIRECTORY))? {
        Some(v) => crs_from_keys(&v.into_u16_vec()?),
        None => None,
    };
    let nodata = match dec.find_tag(Tag::Unknown(GDAL_NODATA))? {
        Some(v) => {
            let s = v.into_string()?;
            s.trim_matches(char::from(0))
                .trim()
                .parse()
                .unwrap_or(DEFAULT_NODATA)
        }
        None => DEFAULT_NODATA,
    };
    let grid = GridSpec {
        width: w as usize,
        height: h as usize,
        origin_x: tie[3] - tie[0] * scale[0],
        origin_y: tie[4] + tie[1] * scale[1],
        gsd_x: scale[0],
        gsd_y: -scale[1],
    };
    let values: Vec<f64> = match dec.read_image()? {
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F64(v) => v,
        DecodingResult::U8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(f64::from).collect(),
        _ => {
            return Err(Error::input(format!(
                "{}: unsupported sample format",
                path.display()
            )))
        }
    };
    if values.len() != grid.len() {
        return Err(Error::input(format!(
            "{}: expected a single-band image",
            path.display()
        )));
    }
    Raster::new(grid, crs, nodata, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let grid = GridSpec {
            width: 7,
            height: 5,
            origin_x: 651_000.0,
            origin_y: 4_012_345.5,
            gsd_x: 0.5,
            gsd_y: -0.5,
        };
        let mut vals: Vec<f64> = (0..35).map(|i| i as f64 * 0.25 - 3.0).collect();
        vals[4] = DEFAULT_NODATA;
        let r = Raster::new(grid, Some(CrsId::utm(11, true)), DEFAULT_NODATA, vals).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.tif");
        write_geotiff(&r, &p).unwrap();
        let back = read_geotiff(&p).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn round_trip_without_crs() {
        let grid = GridSpec {
            width: 3,
            height: 2,
            origin_x: 0.0,
            origin_y: 2.0,
            gsd_x: 1.0,
            gsd_y: -1.0,
        };
        let r = Raster::new(
            grid,
            None,
            DEFAULT_NODATA,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.tif");
        write_geotiff(&r, &p).unwrap();
        assert_eq!(read_geotiff(&p).unwrap(), r);
    }
}
