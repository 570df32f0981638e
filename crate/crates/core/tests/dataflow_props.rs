use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xnorsim::dataflow::{self, ConvShape};
use xnorsim::{BinaryTensor, CrossbarConfig};

fn shapes() -> impl Strategy<Value = (ConvShape, bool)> {
    (1usize..4, 1usize..4, 3usize..11, 3usize..11, 1usize..4, 1usize..3, any::<bool>())
        .prop_filter_map("kernel fits", |(c, j, h, w, k, s, par)| {
            let shape = ConvShape::new(c, j, h, w, k, s).ok()?;
            Some((shape, par && s == 1))
        })
}

/// Window popcounts `[j][oy][ox]` straight from the definition.
fn oracle(input: &BinaryTensor, s: &ConvShape, kernels: &[BinaryTensor]) -> Vec<usize> {
    let mut out = Vec::new();
    for kern in kernels {
        for oy in 0..s.out_h() {
            for ox in 0..s.out_w() {
                let mut m = 0;
                for c in 0..s.in_channels {
                    for r in 0..s.kernel {
                        for col in 0..s.kernel {
                            let x = input.get(c * s.input_h * s.input_w + (oy * s.stride + r) * s.input_w + ox * s.stride + col);
                            m += usize::from(x == kern.get(c * s.kernel * s.kernel + r * s.kernel + col));
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn buffered_traversal_equals_direct_convolution((shape, parallel) in shapes(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernels: Vec<BinaryTensor> = (0..shape.out_channels).map(|_| BinaryTensor::random(&[shape.window_len()], &mut rng)).collect();
        let input = BinaryTensor::random(&[shape.input_len()], &mut rng);
        let image = dataflow::layout_kernels(&shape, &kernels, &CrossbarConfig::default(), parallel).unwrap();
        let (oh, ow) = (shape.out_h(), shape.out_w());
        let mut got = vec![usize::MAX; shape.out_channels * oh * ow];
        let mut reads = 0;
        let log = dataflow::traverse(&input, &shape, parallel, 1, |step| {
            reads += 1;
            for (col, pc) in image.columns.iter().zip(image.read(step.wordlines)?) {
                if col.window_offset < step.windows {
                    got[col.out_channel * oh * ow + step.row * ow + step.col + col.window_offset] = pc;
                }
            }
            Ok(())
        }).unwrap();
        let want = oracle(&input, &shape, &kernels);
        prop_assert_eq!(&got, &want);
        prop_assert_eq!(dataflow::direct_conv_popcounts(&input, &shape, &kernels).unwrap(), want);
        prop_assert_eq!(log.reprogram_events, 0);
        prop_assert_eq!(reads, dataflow::layer_steps(&shape, parallel));
        prop_assert_eq!(log, dataflow::predicted_log(&shape, parallel, 1).unwrap());
    }

    #[test]
    fn wider_elements_scale_bits((shape, parallel) in shapes(), bits in 1usize..9) {
        let input = BinaryTensor::zeros(&[shape.input_len()]);
        let one = dataflow::traverse(&input, &shape, parallel, 1, |_| Ok(())).unwrap();
        let wide = dataflow::traverse(&input, &shape, parallel, bits, |_| Ok(())).unwrap();
        prop_assert_eq!(wide.bits_streamed, one.bits_streamed * bits as u64);
        prop_assert_eq!((wide.slides, wide.wraps), (one.slides, one.wraps));
        prop_assert_eq!(wide, dataflow::predicted_log(&shape, parallel, bits).unwrap());
    }
}

#[test]
fn every_input_pixel_streams_once_per_covering_output_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let c = rng.random_range(1..4);
        let size = rng.random_range(5..16);
        let k = rng.random_range(1..=5.min(size));
        let shape = ConvShape::square(c, 2, size, k).unwrap();
        let log = dataflow::predicted_log(&shape, false, 1).unwrap();
        // Each output row streams the full k-row band once.
        assert_eq!(log.bits_streamed, (shape.out_h() * c * k * size) as u64);
        assert_eq!(log.wraps, shape.out_h() as u64);
        assert_eq!(log.slides, (shape.out_h() * (shape.out_w() - 1)) as u64);
    }
}
