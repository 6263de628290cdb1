//! Dense channels-last containers for images, feature maps and voxel grids.

use crate::{Error, Result};

/// A `height × width × channels` array, row-major with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "raster {width}x{height}x{channels} needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn offset(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let o = self.offset(x, y);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// A `nz × ny × nx × channels` voxel array; x varies fastest, then y, then z.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    /// Voxel counts along x, y, z.
    pub dims: [usize; 3],
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(dims: [usize; 3], channels: usize) -> Self {
        Self {
            dims,
            channels,
            data: vec![0.0; dims[0] * dims[1] * dims[2] * channels],
        }
    }

    pub fn from_vec(dims: [usize; 3], channels: usize, data: Vec<f64>) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2] * channels;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "volume {dims:?}x{channels} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            channels,
            data,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn voxel_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline]
    pub fn voxel(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let o = self.voxel_index(i, j, k) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn voxel_mut(&mut self, i: usize, j: usize, k: usize) -> &mut [f64] {
        let o = self.voxel_index(i, j, k) * self.channels;
        let c = self.channels;
        &mut self.data[o..o + c]
    }
}
