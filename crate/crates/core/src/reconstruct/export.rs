//! Per-pixel feature tensor for external learning stacks: sliced
//! waveforms, per-state distance priors, the Mueller movie and the view
//! direction, concatenated along the channel axis.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::io::{expect_magic, get_f32s, get_u32, put_f32s, put_u32};
use crate::pbrdf::Vec3;
use crate::preprocess::{MuellerMovie, SlicedCube};
use crate::{Error, Result};

/// Channel count for `states` acquisitions and a window of `window` bins.
pub fn feature_channels(states: usize, window: usize) -> usize {
    states * window + states + window * 16 + 3
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    /// `(h, w, c)` order.
    pub data: Vec<f32>,
}

pub fn export_features(sliced: &SlicedCube, mm: &MuellerMovie, views: &[Vec3]) -> Result<FeatureTensor> {
    let np = sliced.pixels();
    if (mm.rows, mm.cols, mm.window) != (sliced.rows, sliced.cols, sliced.window) || views.len() != np {
        return Err(Error::Config("sliced cube, Mueller movie and views disagree in shape".into()));
    }
    let (s, l) = (sliced.states, sliced.window);
    let c = feature_channels(s, l);
    let mut data = Vec::with_capacity(np * c);
    for p in 0..np {
        data.extend(sliced.pixel(p).iter().map(|v| *v as f32));
        data.extend((0..s).map(|i| sliced.d_prior[i * np + p] as f32));
        data.extend(mm.pixel(p).iter().map(|v| *v as f32));
        data.extend(views[p].iter().map(|v| *v as f32));
    }
    Ok(FeatureTensor { rows: sliced.rows, cols: sliced.cols, channels: c, data })
}

impl FeatureTensor {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(b"PFX1")?;
        for v in [self.rows, self.cols, self.channels] {
            put_u32(&mut w, v as u32)?;
        }
        put_f32s(&mut w, self.data.iter().copied())?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        expect_magic(&mut r, b"PFX1")?;
        let (rows, cols, channels) = (get_u32(&mut r)? as usize, get_u32(&mut r)? as usize, get_u32(&mut r)? as usize);
        let data = get_f32s(&mut r, rows * cols * channels)?;
        Ok(Self { rows, cols, channels, data })
    }
}
