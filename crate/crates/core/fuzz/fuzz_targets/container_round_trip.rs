#![no_main]

use ckptmerge::io::container::{decode_container, encode_container};
use ckptmerge::{DType, Tensor, TensorMap};
use libfuzzer_sys::fuzz_target;

// Builds a map from raw bytes: each chunk picks a dtype, a shape and a name,
// then takes its payload from the remaining input.
fuzz_target!(|data: &[u8]| {
    let mut map = TensorMap::new();
    let mut rest = data;
    while rest.len() >= 3 {
        let dtype = [DType::F32, DType::F16, DType::BF16][rest[0] as usize % 3];
        let dims = [rest[1] as usize % 4 + 1, rest[2] as usize % 3 + 1];
        let bytes = dims[0] * dims[1] * dtype.size();
        rest = &rest[3..];
        if rest.len() < bytes {
            break;
        }
        let tensor = Tensor::from_bytes(dtype, dims.to_vec(), rest[..bytes].to_vec()).unwrap();
        map.insert(format!("t{}", map.len()), tensor).unwrap();
        rest = &rest[bytes..];
    }
    let encoded = encode_container(&map);
    let header = u64::from_le_bytes(encoded[..8].try_into().unwrap()) as usize;
    assert_eq!((8 + header) % 8, 0);
    assert_eq!(decode_container(&encoded).unwrap(), map);
});
