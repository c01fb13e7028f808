import logging
import unittest
from io import StringIO
from unittest import mock

from test_base import random_dataset, random_set, toy_network

from qnn_fat.debug_logger import (
    DebugLogger,
    StringLogger,
    debug_session,
    get_debug_logger,
    set_debug_mode,
)
from qnn_fat.evaluation import sweep_channels
from qnn_fat.training import TrainConfig, train


def tiny_config(**overrides):
    values = dict(method="fat1", p=10.0, topology="toy", dataset="synthetic", epochs=1,
                  batch_size=32, eval_subset_size=None)
    values.update(overrides)
    return TrainConfig(**values)


class TestDebugLogging(unittest.TestCase):
    def tearDown(self):
        set_debug_mode(False)

    @mock.patch("sys.stdout", new_callable=StringIO)
    def test_debug_false_no_output(self, mock_stdout):
        """No debug output is produced when debug=False."""
        train(tiny_config(), random_dataset())
        self.assertEqual(mock_stdout.getvalue(), "")

    @mock.patch("sys.stdout", new_callable=StringIO)
    def test_debug_true_produces_output(self, mock_stdout):
        train(tiny_config(), random_dataset(), debug=True)
        output = mock_stdout.getvalue()
        self.assertIn("DEBUG", output)
        self.assertIn("[EPOCH 0]", output)
        self.assertIn("method=fat1", output)

    def test_custom_logger_receives_training_steps(self):
        logger = StringLogger()
        train(tiny_config(epochs=2), random_dataset(), debug=True, logger=logger)
        logs = logger.get_logs()
        self.assertIn("DEBUG: TRAIN: method=fat1", logs)
        self.assertIn("[DATA] 96 train / 64 eval samples, 1 injection points", logs)
        self.assertIn("[EPOCH 1]", logs)
        self.assertIn("enabled=0", logs)

    def test_sweep_logs_every_fault(self):
        logger = StringLogger()
        sweep_channels(toy_network(), random_set(n=16), debug=True, logger=logger)
        fault_lines = [m for m in logger.messages if m.startswith("DEBUG: Fault")]
        self.assertEqual(len(fault_lines), 8)
        self.assertTrue(any("[ERROR-FREE]" in m for m in logger.messages))

    def test_session_restores_previous_logger(self):
        set_debug_mode(False)
        before = get_debug_logger()
        with debug_session(True, StringLogger()) as log:
            self.assertTrue(log.enabled)
        self.assertIs(get_debug_logger(), before)

    def test_nested_session_keeps_outer_logging(self):
        logger = StringLogger()
        with debug_session(True, logger):
            with debug_session(False) as inner:
                inner.log_step("INNER", "still visible")
        self.assertEqual(logger.messages, ["DEBUG: [INNER] still visible"])

    def test_standard_logging_backend(self):
        stream = StringIO()
        backend = logging.getLogger("qnn_fat.tests")
        backend.handlers.clear()
        handler = logging.StreamHandler(stream)
        backend.addHandler(handler)
        backend.setLevel(logging.DEBUG)
        backend.propagate = False
        try:
            DebugLogger(True, backend).log("{} of {}", 3, 4)
        finally:
            backend.removeHandler(handler)
        self.assertEqual(stream.getvalue().strip(), "DEBUG: 3 of 4")

    def test_disabled_logger_is_silent(self):
        logger = StringLogger()
        quiet = DebugLogger(False, logger)
        quiet.log("x")
        quiet.log_epoch(0, 1.0, 50.0, 0.02, "all")
        quiet.log_fault("L0", 10.0)
        self.assertEqual(logger.records, [])

    def test_epoch_line_format(self):
        logger = StringLogger()
        DebugLogger(True, logger).log_epoch(3, 0.1234567, 97.456, 0.005, "all")
        self.assertEqual(
            logger.messages,
            ["DEBUG: [EPOCH 3] loss=0.123457 test_acc=97.46 lr=0.005 enabled=all"],
        )


if __name__ == "__main__":
    unittest.main()
