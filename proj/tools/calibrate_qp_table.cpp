// Regenerates include/mtjrd/qp_table.hpp.
//
// For every QP the stand-in QF is the one whose mean colour PSNR over the corpus
// is closest to an intra-coding anchor curve (anchor_db(qp) = 55 - 0.6 * qp), made
// monotone non-increasing in QP and pinned to QF 100 at QP 0.
//
//   calibrate_qp_table <corpus-dir> > include/mtjrd/qp_table.hpp

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "mtjrd/codec.hpp"
#include "mtjrd/image_io.hpp"
#include "mtjrd/metrics.hpp"

namespace {

constexpr int kVersion = 1;

double anchor_db(int qp) { return 55.0 - 0.6 * qp; }

}  // namespace

int main(int argc, char** argv) {
  using namespace mtjrd;
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <corpus-dir>\n", argv[0]);
    return 2;
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(argv[1]))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<ImagePlane> corpus;
  for (const auto& f : files) corpus.push_back(io::read_image(f));
  if (corpus.empty()) {
    std::fprintf(stderr, "empty corpus\n");
    return 1;
  }

  std::vector<double> mean_psnr(codec::kMaxQf + 1, 0.0);
  for (int qf = codec::kMinQf; qf <= codec::kMaxQf; ++qf) {
    double s = 0;
    for (const auto& img : corpus) s += metrics::psnr(img, codec::decode(codec::encode_uniform(img, qf)));
    mean_psnr[qf] = s / static_cast<double>(corpus.size());
  }

  std::vector<int> table(64);
  for (int qp = 0; qp < 64; ++qp) {
    int best = codec::kMinQf;
    for (int qf = codec::kMinQf; qf <= codec::kMaxQf; ++qf)
      if (std::abs(mean_psnr[qf] - anchor_db(qp)) < std::abs(mean_psnr[best] - anchor_db(qp))) best = qf;
    table[qp] = best;
  }
  table[0] = codec::kMaxQf;
  for (int qp = 1; qp < 64; ++qp) table[qp] = std::min(table[qp], table[qp - 1]);

  std::printf("#ifndef MTJRD_QP_TABLE_HPP\n#define MTJRD_QP_TABLE_HPP\n\n");
  std::printf("// Generated by tools/calibrate_qp_table.cpp from tests/data/corpus (%zu images).\n",
              corpus.size());
  std::printf("// Do not edit by hand.\n\n#include <array>\n\nnamespace mtjrd::vcm {\n\n");
  std::printf("inline constexpr int kQpTableVersion = %d;\n\n", kVersion);
  std::printf("/// Stand-in JPEG quality factor for each VVC-style QP (monotone non-increasing).\n");
  std::printf("inline constexpr std::array<int, 64> kQpToQf = {\n");
  for (int qp = 0; qp < 64; ++qp)
    std::printf("%s%3d%s", qp % 16 == 0 ? "    " : "", table[qp], qp == 63 ? "};\n" : (qp % 16 == 15 ? ",\n" : ", "));
  std::printf("\n}  // namespace mtjrd::vcm\n\n#endif  // MTJRD_QP_TABLE_HPP\n");
  for (int qf : {1, 10, 30, 50, 75, 90, 100}) std::fprintf(stderr, "qf %3d mean psnr %.2f\n", qf, mean_psnr[qf]);
  return 0;
}
