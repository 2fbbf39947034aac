//! Writes a feature tensor and a mask stack in the ATSR format, reads them
//! back, and prints the header bytes.

use adatok::tensor_io::{read_tensor, write_tensor, DType, TensorData, TensorFile};

fn main() -> adatok::Result<()> {
    let dir = std::env::temp_dir().join("adatok-tensor-files");
    std::fs::create_dir_all(&dir)?;

    let values: Vec<f32> = (0..24 * 24 * 16).map(|i| (i % 97) as f32 / 97.0).collect();
    let features = TensorFile::new(vec![24, 24, 16], TensorData::F32(values))?;
    let path = dir.join("features.atsr");
    write_tensor(&features, &path)?;

    let back = read_tensor(&path)?;
    assert_eq!(back, features);
    let bytes = std::fs::read(&path)?;
    println!(
        "{}: {} bytes, dims {:?}, dtype {:?}",
        path.display(),
        bytes.len(),
        back.dims,
        back.dtype()
    );
    println!("header: {}", hex::encode(&bytes[..8 + 4 * back.dims.len()]));

    let half = TensorFile::new(
        vec![24, 24, 1024],
        TensorData::F16(vec![half::f16::ZERO; 24 * 24 * 1024]),
    )?;
    println!("a (24, 24, 1024) f16 file takes {} bytes", half.encoded_len());
    assert_eq!(DType::from_code(0)?, DType::F16);
    Ok(())
}
