use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::scene::ClipSample;
use super::vocab::{encode_sentence, vocab_file};

/// Binary P6, maxval 255, from planar `[3, H, W]` bytes.
pub fn encode_ppm(planar: &[u8], h: usize, w: usize) -> Result<Vec<u8>> {
    if planar.len() != 3 * h * w {
        return Err(Error::Dimension(format!("ppm: {} bytes for 3x{h}x{w}", planar.len())));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for i in 0..plane {
        out.extend([planar[i], planar[plane + i], planar[2 * plane + i]]);
    }
    Ok(out)
}

/// Returns planar `[3, H, W]` bytes with `(h, w)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize)> {
    let (w, h, body) = parse_netpbm(bytes, b"P6")?;
    let plane = h * w;
    if body.len() != 3 * plane {
        return Err(Error::Format(format!("ppm: expected {} data bytes, found {}", 3 * plane, body.len())));
    }
    let mut planar = vec![0u8; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            planar[c * plane + i] = body[3 * i + c];
        }
    }
    Ok((planar, h, w))
}

/// Binary P5 mask, 0 background and 255 foreground.
pub fn encode_pgm(mask: &[bool], h: usize, w: usize) -> Result<Vec<u8>> {
    if mask.len() != h * w {
        return Err(Error::Dimension(format!("pgm: {} pixels for {h}x{w}", mask.len())));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&m| if m { 255u8 } else { 0 }));
    Ok(out)
}

/// Any nonzero value is foreground.
pub fn decode_pgm(bytes: &[u8]) -> Result<(Vec<bool>, usize, usize)> {
    let (w, h, body) = parse_netpbm(bytes, b"P5")?;
    if body.len() != h * w {
        return Err(Error::Format(format!("pgm: expected {} data bytes, found {}", h * w, body.len())));
    }
    Ok((body.iter().map(|&b| b != 0).collect(), h, w))
}

fn parse_netpbm<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<(usize, usize, &'a [u8])> {
    if !bytes.starts_with(magic) {
        return Err(Error::Format(format!("expected {} header", String::from_utf8_lossy(magic))));
    }
    let mut pos = magic.len();
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("malformed netpbm header".into()))?;
    }
    if fields[2] != 255 {
        return Err(Error::Format(format!("unsupported maxval {}", fields[2])));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("missing separator after netpbm header".into()));
    }
    Ok((fields[0], fields[1], &bytes[pos + 1..]))
}

const FLO_MAGIC: &[u8; 4] = b"PIEH";

/// Middlebury `.flo` from planar `[2, H, W]` flow.
pub fn encode_flo(planar: &[f32], h: usize, w: usize) -> Result<Vec<u8>> {
    if planar.len() != 2 * h * w {
        return Err(Error::Dimension(format!("flo: {} values for 2x{h}x{w}", planar.len())));
    }
    let (wi, hi) = (i32::try_from(w), i32::try_from(h));
    let (Ok(wi), Ok(hi)) = (wi, hi) else {
        return Err(Error::Dimension(format!("flo: {h}x{w} too large")));
    };
    let mut out = Vec::with_capacity(12 + 8 * h * w);
    out.extend(FLO_MAGIC);
    out.extend(wi.to_le_bytes());
    out.extend(hi.to_le_bytes());
    let plane = h * w;
    for i in 0..plane {
        out.extend(planar[i].to_le_bytes());
        out.extend(planar[plane + i].to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<(Vec<f32>, usize, usize)> {
    if bytes.len() < 12 || &bytes[..4] != FLO_MAGIC {
        return Err(Error::Format("flo: missing PIEH magic".into()));
    }
    let int = |at: usize| i32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let (w, h) = (int(4), int(8));
    if w < 0 || h < 0 {
        return Err(Error::Format(format!("flo: negative size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let plane = h * w;
    if bytes.len() != 12 + 8 * plane {
        return Err(Error::Format(format!("flo: expected {} bytes, found {}", 12 + 8 * plane, bytes.len())));
    }
    let mut planar = vec![0f32; 2 * plane];
    for i in 0..plane {
        for c in 0..2 {
            let at = 12 + 8 * i + 4 * c;
            planar[c * plane + i] = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        }
    }
    Ok((planar, h, w))
}

/// Writes `clip_<k>/` directories, `manifest.txt` and `vocab.txt`.
pub fn write_dataset(dir: &Path, clips: &[ClipSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (k, clip) in clips.iter().enumerate() {
        let id = format!("clip_{k}");
        let cd = dir.join(&id);
        fs::create_dir_all(&cd)?;
        let (h, w) = (clip.height, clip.width);
        let plane = h * w;
        for t in 0..clip.frames {
            fs::write(cd.join(format!("frame_{t}.ppm")), encode_ppm(&clip.pixels[3 * t * plane..3 * (t + 1) * plane], h, w)?)?;
            fs::write(cd.join(format!("flow_{t}.flo")), encode_flo(&clip.flow[2 * t * plane..2 * (t + 1) * plane], h, w)?)?;
            fs::write(cd.join(format!("mask_{t}.pgm")), encode_pgm(clip.mask(t), h, w)?)?;
        }
        fs::write(cd.join("text.txt"), format!("{}\n", clip.text))?;
        manifest.push_str(&id);
        manifest.push('\n');
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    fs::write(dir.join("vocab.txt"), vocab_file())?;
    Ok(())
}

/// Reads every clip listed in `manifest.txt`; frame count comes from the files present.
pub fn read_dataset(dir: &Path, l_max: usize) -> Result<Vec<ClipSample>> {
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    if let Ok(v) = fs::read_to_string(dir.join("vocab.txt")) {
        if v != vocab_file() {
            return Err(Error::Vocabulary(format!("{} does not match the built-in vocabulary", dir.join("vocab.txt").display())));
        }
    }
    manifest.lines().filter(|l| !l.trim().is_empty()).map(|id| read_clip(&dir.join(id.trim()), l_max)).collect()
}

pub fn read_clip(cd: &Path, l_max: usize) -> Result<ClipSample> {
    let text = fs::read_to_string(cd.join("text.txt"))?.trim().to_string();
    let tokens = encode_sentence(&text, l_max)?;
    let (mut pixels, mut flow, mut masks) = (Vec::new(), Vec::new(), Vec::new());
    let mut dims = None;
    let mut t = 0;
    while cd.join(format!("frame_{t}.ppm")).exists() {
        let (px, h, w) = decode_ppm(&fs::read(cd.join(format!("frame_{t}.ppm")))?)?;
        let (fl, fh, fw) = decode_flo(&fs::read(cd.join(format!("flow_{t}.flo")))?)?;
        let (mk, mh, mw) = decode_pgm(&fs::read(cd.join(format!("mask_{t}.pgm")))?)?;
        if (fh, fw) != (h, w) || (mh, mw) != (h, w) || dims.is_some_and(|d| d != (h, w)) {
            return Err(Error::Format(format!("{}: inconsistent sizes at frame {t}", cd.display())));
        }
        dims = Some((h, w));
        pixels.extend(px);
        flow.extend(fl);
        masks.extend(mk);
        t += 1;
    }
    let Some((height, width)) = dims else {
        return Err(Error::Format(format!("{}: no frames", cd.display())));
    };
    Ok(ClipSample { height, width, frames: t, pixels, flow, masks, text, tokens })
}
