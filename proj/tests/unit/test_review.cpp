#include <random>
#include <thread>

#include <httplib.h>

#include "cmr/eval/correction.hpp"
#include "cmr/review/server.hpp"
#include "common/oracles.hpp"

#undef CHECK
#include <doctest.h>

using namespace cmr;
using namespace cmr::review;
using nlohmann::json;

namespace {

// One patient on a 3 x 24 x 32 grid with two flagged 8x8 regions per phase.
ReviewCase make_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ReviewCase c;
  c.patient_id = "patient900";
  c.spacing = {1.5, 1.5, 8.0};
  const Shape3 shape{3, 24, 32};
  for (int p = 0; p < 2; ++p) {
    c.image[p] = ImageVolume(shape, 0.5f);
    c.reference[p] = LabelVolume(shape, 0);
    c.auto_seg[p] = LabelVolume(shape, 0);
    for (int z = 0; z < 3; ++z)
      for (int y = 6; y < 18; ++y)
        for (int x = 8; x < 24; ++x) {
          c.reference[p](z, y, x) = y < 9 ? kRV : (x < 12 || x >= 20 ? kLVM : kLV);
          c.auto_seg[p](z, y, x) = c.reference[p](z, y, x);
        }
    // Corrupt a block that the detector flags and one it misses.
    for (int y = 8; y < 13; ++y)
      for (int x = 16; x < 21; ++x) c.auto_seg[p](1, y, x) = static_cast<std::uint8_t>(rng() % 4);
    for (int y = 18; y < 20; ++y) c.auto_seg[p](2, y, 2) = kLV;
    c.flagged[p] = MaskVolume(shape, 0);
    c.regions[p] = {{1, 8, 16, 16, 24}, {0, 0, 0, 8, 8}};
    for (const auto& r : c.regions[p])
      for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) c.flagged[p](r.z, y, x) = 1;
  }
  return c;
}

Runs region_runs(const detect::VoxelRegion& r, int w) {
  Runs runs;
  for (int y = r.y0; y < r.y1; ++y) runs.emplace_back(y * w + r.x0, r.x1 - r.x0);
  return runs;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("run-length helpers") {
  CHECK(expand_runs({{3, 2}, {10, 1}}, 20) == std::vector<int>{3, 4, 10});
  CHECK(code_of([] { expand_runs({{-1, 2}}, 20); }) == ErrorCode::EditRejected);
  CHECK(code_of([] { expand_runs({{19, 2}}, 20); }) == ErrorCode::EditRejected);
  CHECK(code_of([] { expand_runs({{0, 0}}, 20); }) == ErrorCode::EditRejected);
  CHECK(code_of([] { expand_runs({{2147483000, 1000}}, 20); }) == ErrorCode::EditRejected);
  std::mt19937 rng(5);
  for (int i = 0; i < 50; ++i) {
    std::vector<std::uint8_t> v(rng() % 60);
    for (auto& x : v) x = rng() % 3;
    const auto rle = encode_label_rle(v);
    CHECK(decode_label_rle(rle, v.size()) == v);
  }
  CHECK(code_of([] { decode_label_rle(json::parse("[[1, 5]]"), 4); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("edits are confined to flagged regions") {
  ReviewService svc({make_case(1)});
  auto s = svc.create_session("patient900", io::Phase::ED);
  CHECK(s.version == 0);
  const int w = 32;

  auto after = svc.apply_manual_edit(s.session_id, 0, 1, {{8 * w + 16, 4}}, kLV);
  CHECK(after.audit_log.size() == 1);
  CHECK(after.version == 1);
  CHECK(after.edited_mask(1, 8, 17) == kLV);

  const auto before = svc.session(s.session_id).edited_mask;
  // One voxel past the region's right edge.
  CHECK(code_of([&] { svc.apply_manual_edit(s.session_id, 1, 1, {{8 * w + 20, 5}}, kRV); }) == ErrorCode::EditRejected);
  CHECK(code_of([&] { svc.apply_manual_edit(s.session_id, 1, 2, {{0, 1}}, kRV); }) == ErrorCode::EditRejected);
  CHECK(code_of([&] { svc.apply_manual_edit(s.session_id, 1, 1, {{8 * w + 16, 1}}, 4); }) == ErrorCode::EditRejected);
  CHECK(code_of([&] { svc.apply_manual_edit(s.session_id, 1, 7, {{0, 1}}, 1); }) == ErrorCode::EditRejected);
  CHECK(code_of([&] { svc.apply_manual_edit(s.session_id, 0, 1, {{8 * w + 16, 1}}, 1); }) == ErrorCode::StaleVersion);
  CHECK(code_of([&] { svc.apply_manual_edit("nope", 0, 1, {{0, 1}}, 1); }) == ErrorCode::NotFound);
  CHECK(svc.session(s.session_id).edited_mask == before);
  CHECK(svc.session(s.session_id).audit_log.size() == 1);
  CHECK(code_of([&] { svc.create_session("patient000", io::Phase::ED); }) == ErrorCode::NotFound);
}

TEST_CASE("adversarial edit streams keep the region invariant and replay exactly") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = make_case(trial);
    ReviewService svc({c});
    auto s = svc.create_session(c.patient_id, io::Phase::ES);
    const int n = 24 * 32;
    for (int e = 0; e < 40; ++e) {
      Runs runs;
      const int k = 1 + static_cast<int>(rng() % 3);
      for (int i = 0; i < k; ++i) runs.emplace_back(static_cast<int>(rng() % (n + 8)) - 4, 1 + static_cast<int>(rng() % 10));
      const int z = static_cast<int>(rng() % 4);
      const int label = static_cast<int>(rng() % 5);
      const long long version = svc.session(s.session_id).version - (rng() % 6 == 0 ? 1 : 0);
      try {
        svc.apply_manual_edit(s.session_id, version, z, runs, label);
      } catch (const Error& err) {
        CHECK((err.code() == ErrorCode::EditRejected || err.code() == ErrorCode::StaleVersion));
      }
    }
    const auto cur = svc.session(s.session_id);
    const auto& flagged = c.flagged[1];
    for (std::size_t i = 0; i < cur.edited_mask.size(); ++i)
      if (cur.edited_mask[i] != c.auto_seg[1][i]) CHECK(flagged[i] == 1);
    for (const auto& e : cur.audit_log)
      for (int v : expand_runs(e.runs, n)) CHECK(flagged.slice(e.z)[v] == 1);
    CHECK(replay_audit(c.auto_seg[1], cur.audit_log) == cur.edited_mask);
    CHECK(cur.version == static_cast<long long>(cur.audit_log.size()));
  }
}

TEST_CASE("submission") {
  const auto c = make_case(3);
  ReviewService svc({c});

  auto idle = svc.create_session(c.patient_id, io::Phase::ED);
  const auto zero = svc.submit_session(idle.session_id).to_json(io::Phase::ED);
  for (const auto& [k, v] : zero["delta"]["dice"].items()) CHECK(v.get<double>() == 0.0);
  CHECK(zero["delta"]["mean_dice"].get<double>() == 0.0);
  CHECK(code_of([&] { svc.submit_session(idle.session_id); }) == ErrorCode::SessionClosed);
  CHECK(code_of([&] { svc.apply_manual_edit(idle.session_id, 1, 1, {{8 * 32 + 16, 1}}, 1); }) ==
        ErrorCode::SessionClosed);

  // Copying the reference into every flagged region equals simulated correction.
  for (io::Phase phase : io::kPhases) {
    const int p = static_cast<int>(phase);
    auto s = svc.create_session(c.patient_id, phase);
    long long v = 0;
    for (const auto& r : c.regions[p])
      for (std::uint8_t lab = 0; lab < kNumClasses; ++lab) {
        Runs runs;
        for (int y = r.y0; y < r.y1; ++y)
          for (int x = r.x0; x < r.x1; ++x)
            if (c.reference[p](r.z, y, x) == lab) runs.emplace_back(y * 32 + x, 1);
        if (runs.empty()) continue;
        svc.apply_manual_edit(s.session_id, v++, r.z, runs, lab);
      }
    const auto rep = svc.submit_session(s.session_id);
    const auto sim = eval::simulate_correction(c.auto_seg[p], c.reference[p], c.regions[p]);
    CHECK(svc.session(s.session_id).edited_mask == sim);
    const auto expected = phase_report(c, phase, sim);
    CHECK(rep.to_json(phase) == expected.to_json(phase));
    CHECK(rep.after.dice[p][0] >= rep.before.dice[p][0]);
    CHECK(rep.after.mean_dice() > rep.before.mean_dice());
  }
}

TEST_CASE("region mapping to the original grid") {
  io::ResampleGeometry g{{4, 50, 61}, {1.68, 1.68, 10}, {4, 60, 73}, {1.4, 1.4, 10}};
  MaskVolume working(g.working_shape, 0);
  const detect::VoxelRegion r{2, 16, 24, 24, 32};
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) working(2, y, x) = 1;
  const auto mapped = io::mask_to_original_grid(working, g);
  const auto o = region_to_original(r, g);
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 50; ++y)
      for (int x = 0; x < 61; ++x) {
        const bool in = z == o.z && y >= o.y0 && y < o.y1 && x >= o.x0 && x < o.x1;
        CHECK(mapped(z, y, x) == in);
      }
}

TEST_CASE("http api") {
  const auto c = make_case(9);
  ReviewService svc({c});
  ServerOptions opts;
  opts.port = 0;
  opts.token = "secret";
  ReviewServer server(svc, opts);
  const int port = server.bind();
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  CHECK(cli.Get("/cases")->status == 401);
  const httplib::Headers auth{{"Authorization", "Bearer secret"}};

  auto res = cli.Get("/cases", auth);
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)[0]["patient_id"] == "patient900");

  res = cli.Get("/cases/patient900/ES/slices/1", auth);
  REQUIRE(res->status == 200);
  const auto payload = json::parse(res->body);
  CHECK(decode_label_rle(payload["mask"], 24 * 32) ==
        std::vector<std::uint8_t>(c.auto_seg[1].slice(1).begin(), c.auto_seg[1].slice(1).end()));
  CHECK(payload["flagged"]["regions"].size() == 1);
  CHECK(payload["image_png"].get<std::string>().rfind("iVBORw0KGgo", 0) == 0);
  CHECK(cli.Get("/cases/patient900/ES/slices/9", auth)->status == 404);
  CHECK(cli.Get("/cases/nobody/ES/slices/0", auth)->status == 404);

  res = cli.Post("/sessions", auth, R"({"patient_id":"patient900","phase":"ES"})", "application/json");
  REQUIRE(res->status == 201);
  const std::string id = json::parse(res->body)["session_id"];

  // Forged payload crossing the region boundary.
  json forged{{"version", 0}, {"z", 1}, {"label", 3}, {"runs", {{8 * 32 + 14, 4}}}};
  res = cli.Post("/sessions/" + id + "/edits", auth, forged.dump(), "application/json");
  CHECK(res->status == 422);
  CHECK(svc.session(id).edited_mask == c.auto_seg[1]);

  json good{{"version", 0}, {"z", 1}, {"label", 3}, {"runs", region_runs({1, 8, 16, 10, 24}, 32)}};
  res = cli.Post("/sessions/" + id + "/edits", auth, good.dump(), "application/json");
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["version"] == 1);
  res = cli.Post("/sessions/" + id + "/edits", auth, good.dump(), "application/json");
  CHECK(res->status == 409);
  CHECK(cli.Post("/sessions/" + id + "/edits", auth, "{not json", "application/json")->status == 400);

  CHECK(cli.Get("/sessions/" + id + "/report", auth)->status == 409);
  res = cli.Post("/sessions/" + id + "/submit", auth, "", "application/json");
  CHECK(res->status == 200);
  const auto submitted = json::parse(res->body);
  res = cli.Get("/sessions/" + id + "/report", auth);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body) == submitted);
  CHECK(cli.Post("/sessions/" + id + "/submit", auth, "", "application/json")->status == 409);

  server.stop();
  th.join();
}
