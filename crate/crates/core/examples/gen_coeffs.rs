//! Regenerates `data/oscillatory_coeffs.txt`.

use sal_core::data::OscillatoryCoeffs;

fn main() {
    print!("{}", OscillatoryCoeffs::generate(1).to_text());
}
