import tempfile
from pathlib import Path

import numpy as np
from test_base import QnnTestBase, random_set, randomize_batch_norm, toy_network, two_point_network

from qnn_fat.checkpoint import MAGIC, load_checkpoint, read_checkpoint_header, save_checkpoint
from qnn_fat.errors import CheckpointError
from qnn_fat.layers import LayerKind


class TestCheckpointRoundTrip(QnnTestBase):
    def setUp(self):
        super().setUp()
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bit_exact(self):
        net = randomize_batch_norm(two_point_network(seed=7, act_bits=2), seed=7)
        path = save_checkpoint(net, self.dir / "net.qfat", extra={"note": "two-point"})
        loaded, extra = load_checkpoint(path)

        self.assertEqual(loaded.parameter_digest(), net.parameter_digest())
        self.assertEqual(extra, {"note": "two-point"})
        self.assertEqual(loaded.metadata, net.metadata)
        self.assertEqual([l.kind for l in loaded.layers], [l.kind for l in net.layers])
        data = random_set(n=20, seed=2)
        self.assertArrayEqual(loaded.forward(data.images), net.forward(data.images))

    def test_header_records_codebooks_and_specs(self):
        net = toy_network(act_bits=2)
        header, blob = read_checkpoint_header(save_checkpoint(net, self.dir / "toy.qfat"))
        self.assertEqual(header["format_version"], 1)
        self.assertEqual(header["input_shape"], [1, 8, 8])
        quant = [entry for entry in header["layers"] if entry["spec"]["kind"] == "quant_act"]
        self.assertEqual(quant[0]["codebook"]["values"], [-1.0, 0.0, 1.0])
        sizes = sum(t["nbytes"] for entry in header["layers"] for t in entry["tensors"])
        self.assertEqual(sizes, len(blob))

    def test_slot_settings_survive(self):
        net = toy_network(p=12.5)
        net.set_slot_status([True])
        loaded, _ = load_checkpoint(save_checkpoint(net, self.dir / "slots.qfat"))
        slot = loaded.slot_layers[0]
        self.assertIs(slot.kind, LayerKind.INJECTION)
        self.assertEqual(slot.spec.p, 12.5)
        self.assertEqual(loaded.slot_status(), [True])

    def test_bad_magic(self):
        path = self.dir / "bad.qfat"
        path.write_bytes(b"NOPE" + bytes(20))
        with self.assertRaises(CheckpointError) as ctx:
            load_checkpoint(path)
        self.assertIn("bad magic", str(ctx.exception))

    def test_truncated_file(self):
        path = save_checkpoint(toy_network(), self.dir / "full.qfat")
        raw = path.read_bytes()
        self.assertEqual(raw[:4], MAGIC)
        short = self.dir / "short.qfat"
        short.write_bytes(raw[:-8])
        with self.assertRaises(CheckpointError):
            load_checkpoint(short)
        tiny = self.dir / "tiny.qfat"
        tiny.write_bytes(raw[:5])
        with self.assertRaises(CheckpointError):
            load_checkpoint(tiny)

    def test_unknown_version(self):
        path = save_checkpoint(toy_network(), self.dir / "v.qfat")
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with self.assertRaises(CheckpointError):
            load_checkpoint(path)

    def test_weights_are_float32_little_endian(self):
        net = toy_network(seed=3)
        header, blob = read_checkpoint_header(save_checkpoint(net, self.dir / "w.qfat"))
        entry = header["layers"][0]["tensors"][0]
        raw = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        values = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
        self.assertArrayEqual(values, net.layers[0].weight.data)
