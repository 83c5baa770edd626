//! Writes a contact sheet of synthetic person crops and street windows.

use dummynet_core::image::Image;
use dummynet_core::rng;
use dummynet_core::synth::{background_window, person_crop, CropSpec};

fn main() -> dummynet_core::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "gallery.png".into());
    let mut r = rng::seeded(7);
    let (cols, rows, s) = (8usize, 4usize, 64usize);
    let mut sheet = Image::<f32>::zeros(3, rows * s, cols * s);
    for i in 0..cols * rows {
        let tile = if i < cols * 3 { person_crop::<f32, _>(&mut r, &CropSpec::default()).image } else { background_window(&mut r, s, (0.5, 1.1)) };
        let (oy, ox) = ((i / cols) * s, (i % cols) * s);
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    sheet.set(c, oy + y, ox + x, tile.get(c, y, x));
                }
            }
        }
    }
    sheet.save_png(std::path::Path::new(&out))
}
