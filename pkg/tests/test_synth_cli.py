from pathlib import Path

import pytest

from strokebench.annotations import parse_annotations
from strokebench.cli import RunConfig, build_run_config, load_config_file, main, make_parser
from strokebench.errors import ConfigError
from strokebench.frames import open_rgbv
from strokebench.synth import SynthConfig, generate_corpus


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestSynth:
    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = SynthConfig(classes=2, train_per_class=2, val_per_class=1, test_per_class=1,
                          frame_size=16, stroke_len=20, gap_len=15, strokes_per_video=2)
        generate_corpus(tmp_path / "a", cfg)
        generate_corpus(tmp_path / "b", cfg)
        assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")

    def test_seed_changes_corpus(self, tmp_path):
        base = dict(classes=2, train_per_class=2, val_per_class=1, test_per_class=1,
                    frame_size=16, stroke_len=20, gap_len=15, strokes_per_video=2)
        generate_corpus(tmp_path / "a", SynthConfig(**base, seed=0))
        generate_corpus(tmp_path / "b", SynthConfig(**base, seed=1))
        assert _tree_bytes(tmp_path / "a") != _tree_bytes(tmp_path / "b")

    def test_requested_counts(self, tmp_path):
        cfg = SynthConfig(classes=2, train_per_class=20, val_per_class=1, test_per_class=1,
                          frame_size=16, stroke_len=20, gap_len=15, strokes_per_video=5)
        counts = generate_corpus(tmp_path, cfg)
        assert counts["train"] == 40
        total = 0
        for p in (tmp_path / "train").glob("*.xml"):
            total += len(parse_annotations(p.read_bytes()).segments)
        assert total == 40

    def test_annotations_validate_and_match_videos(self, tmp_path):
        cfg = SynthConfig(classes=3, train_per_class=2, val_per_class=1, test_per_class=1,
                          frame_size=16, stroke_len=20, gap_len=15, strokes_per_video=3)
        generate_corpus(tmp_path, cfg)
        for split in ("train", "validation", "test"):
            xmls = sorted((tmp_path / split).glob("*.xml"))
            assert xmls
            for p in xmls:
                ann = parse_annotations(p.read_bytes())
                src = open_rgbv(p.with_suffix(".rgbv"))
                assert src.frame_count == ann.frame_count
                assert src.fps == ann.fps
                assert ann.ground_truth

    def test_classes_render_differently(self, tmp_path):
        cfg = SynthConfig(classes=2, train_per_class=1, val_per_class=1, test_per_class=1,
                          frame_size=16, stroke_len=20, gap_len=15, strokes_per_video=2)
        generate_corpus(tmp_path, cfg)
        ann = parse_annotations((tmp_path / "train" / "train000.xml").read_bytes())
        src = open_rgbv(tmp_path / "train" / "train000.rgbv")
        seg0, seg1 = ann.segments
        assert seg0.label != seg1.label
        a = src.frame(seg0.begin + 5)
        b = src.frame(seg1.begin + 5)
        assert a.any() and b.any()
        # gap frames are black
        assert not src.frame(seg0.end + 2).any()

    def test_too_many_classes_rejected(self, tmp_path):
        cfg = SynthConfig(classes=21, train_per_class=1)
        with pytest.raises(ConfigError, match="taxonomy"):
            generate_corpus(tmp_path, cfg)


class TestConfig:
    def test_defaults_match_contract(self):
        cfg = RunConfig()
        assert (cfg.lr, cfg.momentum, cfg.weight_decay) == (1e-4, 0.5, 0.005)
        assert cfg.epochs == 500
        assert (cfg.cuboid_len, cfg.cuboid_size) == (98, 120)
        assert (cfg.proposal_len, cfg.proposal_stride) == (150, 150)
        assert cfg.block_len == 200
        assert cfg.batch == 10
        assert cfg.map_tiou == 0.5

    def test_config_file_then_flags(self, tmp_path):
        cfile = tmp_path / "run.cfg"
        cfile.write_text("epochs = 7\nlr=0.5\ntask=classification\n# comment\n\nfilters=4,8\n")
        parser = make_parser()
        args = parser.parse_args(["train", "--config", str(cfile), "--lr", "0.25"])
        cfg = build_run_config(args)
        assert cfg.epochs == 7
        assert cfg.lr == 0.25  # flag wins
        assert cfg.task == "classification"
        assert cfg.filters == (4, 8)

    def test_unknown_key_rejected(self, tmp_path):
        cfile = tmp_path / "bad.cfg"
        cfile.write_text("warp_speed=9\n")
        with pytest.raises(ConfigError, match="unknown config key"):
            load_config_file(cfile)

    def test_bad_value_rejected(self, tmp_path):
        cfile = tmp_path / "bad.cfg"
        cfile.write_text("epochs=ten\n")
        with pytest.raises(ConfigError, match="bad value"):
            load_config_file(cfile)

    def test_threads_env_cap(self, monkeypatch):
        parser = make_parser()
        args = parser.parse_args(["train"])
        monkeypatch.setenv("STROKEBENCH_THREADS", "1")
        assert build_run_config(args).threads == 1
        monkeypatch.setenv("STROKEBENCH_THREADS", "zero")
        with pytest.raises(ConfigError, match="STROKEBENCH_THREADS"):
            build_run_config(args)


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    cfg = SynthConfig(classes=2, train_per_class=4, val_per_class=2, test_per_class=2,
                      frame_size=16, stroke_len=30, gap_len=25, strokes_per_video=4,
                      seed=5)
    generate_corpus(root, cfg)
    return root


def _train_args(corpus, out, extra=()):
    return ["train", "--task", "detection", "--data", str(corpus), "--out", str(out),
            "--seed", "3", "--deterministic", "--epochs", "2", "--batch", "4",
            "--lr", "0.01", "--cuboid-len", "8", "--cuboid-size", "16",
            "--filters", "4", "--hidden", "8", "--block-len", "10",
            "--proposal-len", "30", "--proposal-stride", "30", *extra]


class TestCommands:
    def test_prepare_counts_and_indices(self, tiny_corpus, tmp_path, capsys):
        out = tmp_path / "run"
        rc = main(["prepare", "--task", "detection", "--data", str(tiny_corpus),
                   "--out", str(out), "--block-len", "10"])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "train:" in printed and "non-stroke" in printed
        lines = (out / "detection_train_index.csv").read_text().strip().split("\n")
        assert lines[0] == "video_id,begin,end,label"
        labels = {line.split(",")[3] for line in lines[1:]}
        assert labels == {"Stroke", "Non-stroke"}
        # gaps of 25 with 10-frame blocks: floor(25/10) = 2 negatives per inner gap
        n_neg = sum(1 for line in lines[1:] if line.endswith("Non-stroke"))
        n_videos = len(list((tiny_corpus / "train").glob("*.xml")))
        assert n_neg == 2 * 3 * n_videos  # 3 inner gaps per 4-stroke video

    def test_prepare_one_400_frame_gap_yields_two_negative_rows(self, tmp_path):
        from strokebench.annotations import Segment, render_annotation_xml
        data = tmp_path / "data"
        for split in ("train", "validation"):
            (data / split).mkdir(parents=True)
            xml = render_annotation_xml(
                f"{split}0", [Segment(100, 300, "A"), Segment(700, 1000, "B")], 2000, 120.0)
            (data / split / f"{split}0.xml").write_bytes(xml)
        out = tmp_path / "run"
        assert main(["prepare", "--task", "detection", "--data", str(data),
                     "--out", str(out)]) == 0
        lines = (out / "detection_train_index.csv").read_text().strip().split("\n")[1:]
        negatives = [line for line in lines if line.endswith("Non-stroke")]
        assert len(negatives) == 2
        assert negatives[0].split(",")[1:3] == ["300", "500"]
        assert negatives[1].split(",")[1:3] == ["500", "700"]

    def test_prepare_classification_has_no_negatives(self, tiny_corpus, tmp_path):
        out = tmp_path / "run"
        assert main(["prepare", "--task", "classification", "--data", str(tiny_corpus),
                     "--out", str(out)]) == 0
        text = (out / "classification_train_index.csv").read_text()
        assert "Non-stroke" not in text

    def test_prepare_missing_data_fails(self, tmp_path):
        assert main(["prepare", "--task", "detection", "--data",
                     str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2

    def test_train_missing_index_fails(self, tiny_corpus, tmp_path):
        rc = main(_train_args(tiny_corpus, tmp_path / "fresh"))
        assert rc == 2

    def test_full_cli_round_and_history(self, tiny_corpus, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["prepare", "--task", "detection", "--data", str(tiny_corpus),
                     "--out", str(out), "--block-len", "10"]) == 0
        assert main(_train_args(tiny_corpus, out)) == 0
        hist = (out / "detection_history.csv").read_text().strip().split("\n")
        assert hist[0] == "epoch,train_loss,train_acc,val_acc"
        assert len(hist) == 3  # 2 epochs
        assert main(["infer", "--task", "detection", "--data", str(tiny_corpus),
                     "--out", str(out), "--proposal-len", "30",
                     "--proposal-stride", "30"]) == 0
        preds = sorted((out / "predictions").glob("*.xml"))
        assert preds
        capsys.readouterr()
        assert main(["eval", "--task", "detection", "--data", str(tiny_corpus),
                     "--out", str(out)]) == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0].startswith("mAP: ")
        assert lines[1].startswith("global IoU: ")
        assert 0.0 <= float(lines[0].split(": ")[1]) <= 1.0

    def test_deterministic_reruns_are_byte_identical(self, tiny_corpus, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert main(["prepare", "--task", "detection", "--data", str(tiny_corpus),
                         "--out", str(out), "--block-len", "10"]) == 0
            assert main(_train_args(tiny_corpus, out)) == 0
            outs.append(out)
        a, b = outs
        assert (a / "detection_model.ckpt").read_bytes() == (b / "detection_model.ckpt").read_bytes()
        assert (a / "detection_history.csv").read_bytes() == (b / "detection_history.csv").read_bytes()

    def test_eval_rejects_unknown_video_predictions(self, tiny_corpus, tmp_path):
        out = tmp_path / "run"
        (out / "predictions").mkdir(parents=True)
        from strokebench.annotations import Segment, write_predictions
        (out / "predictions" / "ghost.xml").write_bytes(
            write_predictions("ghost", [Segment(0, 10, "Stroke", 0.5)]))
        assert main(["eval", "--task", "detection", "--data", str(tiny_corpus),
                     "--out", str(out)]) == 2

    def test_classification_eval_report_columns(self, tiny_corpus, tmp_path, capsys):
        out = tmp_path / "runc"
        assert main(["prepare", "--task", "classification", "--data", str(tiny_corpus),
                     "--out", str(out)]) == 0
        args = _train_args(tiny_corpus, out)
        args[2] = "classification"
        assert main(args) == 0
        assert main(["infer", "--task", "classification", "--data", str(tiny_corpus),
                     "--out", str(out)]) == 0
        capsys.readouterr()
        assert main(["eval", "--task", "classification", "--data", str(tiny_corpus),
                     "--out", str(out)]) == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0] == "Global,Type and Hand-Sided,Type,Hand-Side"
        values = [float(v) for v in lines[1].split(",")]
        assert len(values) == 4
        for level in ("global", "type_hand", "type", "hand"):
            csv_text = (out / f"confusion_{level}.csv").read_text()
            assert csv_text.startswith("truth\\pred,")

    def test_task_checkpoint_mismatch_fails(self, tiny_corpus, tmp_path):
        out = tmp_path / "run"
        assert main(["prepare", "--task", "detection", "--data", str(tiny_corpus),
                     "--out", str(out), "--block-len", "10"]) == 0
        assert main(_train_args(tiny_corpus, out)) == 0
        rc = main(["infer", "--task", "classification", "--data", str(tiny_corpus),
                   "--out", str(out), "--checkpoint", str(out / "detection_model.ckpt")])
        assert rc == 2

    def test_gradcheck_command(self, capsys):
        assert main(["gradcheck", "--trials", "5", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        for kind in ("conv3d", "maxpool3d", "linear", "relu", "softmax_cross_entropy"):
            assert f"{kind}: max_rel_err=" in out
        assert out.count("PASS") == 5

    def test_gradcheck_command_flags_corrupted_backward(self, capsys, monkeypatch):
        from strokebench.nn import ops
        real = ops.linear_backward

        def broken(x, w, grad_out):
            gx, gw, gb = real(x, w, grad_out)
            return gx * 1.01, gw, gb

        monkeypatch.setattr(ops, "linear_backward", broken)
        assert main(["gradcheck", "--trials", "5", "--seed", "1"]) == 1
        assert "linear: max_rel_err=" in capsys.readouterr().out

    def test_synth_command_counts(self, tmp_path, capsys):
        out = tmp_path / "c"
        rc = main(["synth", "--out", str(out), "--classes", "2", "--samples", "20",
                   "--val-samples", "1", "--test-samples", "1", "--frame-size", "16",
                   "--stroke-len", "20", "--gap-len", "15", "--strokes-per-video", "5",
                   "--seed", "9"])
        assert rc == 0
        assert "train: 40 segments" in capsys.readouterr().out
