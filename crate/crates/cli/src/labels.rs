use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::Context;
use mixsr_core::mixture::LabelMap;

/// Eight well-separated colours, cycled for larger mixtures.
const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [145, 30, 180],
    [245, 130, 48],
    [70, 240, 240],
    [128, 128, 128],
];

/// Writes batch item 0 of `labels` as an indexed PNG with `classes` palette
/// entries; each pixel's value is its expert index.
pub fn write_label_png(labels: &LabelMap, classes: usize, path: &Path) -> anyhow::Result<()> {
    anyhow::ensure!(
        (1..=256).contains(&classes),
        "{classes} classes do not fit an 8-bit palette"
    );
    let file = File::create(path).with_context(|| format!("creating `{}`", path.display()))?;
    let mut enc = png::Encoder::new(
        BufWriter::new(file),
        labels.width as u32,
        labels.height as u32,
    );
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    let palette: Vec<u8> = (0..classes)
        .flat_map(|i| PALETTE[i % PALETTE.len()])
        .collect();
    enc.set_palette(palette);
    let mut writer = enc.write_header()?;
    let data: Vec<u8> = (0..labels.height)
        .flat_map(|y| (0..labels.width).map(move |x| labels.at(0, y, x) as u8))
        .collect();
    writer.write_image_data(&data)?;
    writer.finish()?;
    Ok(())
}

/// Raw palette indices of an indexed PNG, row-major.
pub fn read_label_png(path: &Path) -> anyhow::Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).with_context(|| format!("opening `{}`", path.display()))?;
    let mut reader = png::Decoder::new(std::io::BufReader::new(file)).read_info()?;
    let info = reader.info();
    anyhow::ensure!(
        info.color_type == png::ColorType::Indexed && info.bit_depth == png::BitDepth::Eight,
        "`{}` is not an 8-bit indexed PNG",
        path.display()
    );
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().context("image too large")?];
    reader.next_frame(&mut buf)?;
    buf.truncate(w * h);
    Ok((w, h, buf))
}
