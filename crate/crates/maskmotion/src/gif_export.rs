//! Animated GIF preview of a video, upscaled with nearest neighbor.

use std::path::Path;

use maskmotion_core::Video;

use crate::error::{CliError, Result};

/// Encodes `video` as a looping GIF, each pixel drawn as a `scale × scale`
/// block and each frame shown for `delay_cs` hundredths of a second.
pub fn encode_gif(video: &Video, scale: usize, delay_cs: u16) -> Result<Vec<u8>, String> {
    let (f, h, w) = video.dims();
    let (oh, ow) = (h * scale, w * scale);
    let (gw, gh) = (
        u16::try_from(ow).map_err(|_| "too wide")?,
        u16::try_from(oh).map_err(|_| "too tall")?,
    );
    let mut out = Vec::new();
    {
        let mut enc = gif::Encoder::new(&mut out, gw, gh, &[]).map_err(|e| e.to_string())?;
        enc.set_repeat(gif::Repeat::Infinite).map_err(|e| e.to_string())?;
        let mut rgb = vec![0u8; oh * ow * 3];
        for t in 0..f {
            for y in 0..oh {
                for x in 0..ow {
                    let p = video.pixel(t, y / scale, x / scale);
                    let o = 3 * (y * ow + x);
                    for c in 0..3 {
                        rgb[o + c] = (p[c].clamp(0.0, 1.0) * 255.0).round() as u8;
                    }
                }
            }
            let mut frame = gif::Frame::from_rgb_speed(gw, gh, &rgb, 10);
            frame.delay = delay_cs;
            enc.write_frame(&frame).map_err(|e| e.to_string())?;
        }
    }
    Ok(out)
}

pub fn export_gif(video: &Video, path: &Path, scale: usize) -> Result<()> {
    let bytes = encode_gif(video, scale.max(1), 12).map_err(|msg| CliError::Gif {
        path: path.to_path_buf(),
        msg,
    })?;
    crate::formats::atomic_write(path, &bytes)
}
