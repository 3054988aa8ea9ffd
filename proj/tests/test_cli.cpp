#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const char* kCli = MCE_CLI_PATH;

// tiny configuration shared by all CLI invocations below
const std::string kTinyOverrides =
    " --dataset.image_size=16 --dataset.samples_per_class=4"
    " --model.widths=[8,8,8] --model.token_dim=8 --model.cross_channels=8"
    " --model.decoder_channels=8 --eval.episodes=12";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(kCli) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string run_cli_capture(const std::string& args, int* exit_code) {
  const fs::path out = fs::temp_directory_path() / "mce_cli_capture.txt";
  const std::string cmd =
      std::string(kCli) + " " + args + " >" + out.string() + " 2>&1";
  *exit_code = WEXITSTATUS(std::system(cmd.c_str()));
  std::ifstream in(out);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    out[fs::relative(entry.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), {});
  }
  return out;
}

}  // namespace

TEST_CASE("gen-data writes class directories with paired masks, deterministically") {
  const fs::path dir_a = fresh_dir("mce_cli_gen_a");
  const fs::path dir_b = fresh_dir("mce_cli_gen_b");
  REQUIRE(run_cli("gen-data --out " + dir_a.string() + kTinyOverrides) == 0);
  REQUIRE(run_cli("gen-data --out " + dir_b.string() + kTinyOverrides) == 0);

  int images = 0, masks = 0, class_dirs = 0;
  for (const auto& entry : fs::directory_iterator(dir_a)) {
    if (entry.is_directory()) ++class_dirs;
  }
  CHECK(class_dirs == 8);
  for (const auto& entry : fs::recursive_directory_iterator(dir_a)) {
    if (entry.path().extension() == ".ppm") ++images;
    if (entry.path().extension() == ".pgm") ++masks;
  }
  CHECK(images == 8 * 4);
  CHECK(masks == images);
  CHECK(fs::exists(dir_a / "index.csv"));

  CHECK(snapshot_tree(dir_a) == snapshot_tree(dir_b));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("eval --oracle reports perfect mIoU") {
  int code = -1;
  const std::string out = run_cli_capture("eval --oracle" + kTinyOverrides, &code);
  CHECK(code == 0);
  CHECK(out.find("miou") != std::string::npos);
  CHECK(out.find(",1,") != std::string::npos);  // miou column == 1
}

TEST_CASE("train, eval, and predict round-trip through files") {
  const fs::path work = fresh_dir("mce_cli_train");
  const std::string ckpt = (work / "model.mcec").string();
  const std::string loss = (work / "loss.csv").string();
  const std::string train_args = "train --out " + ckpt + " --loss-csv " + loss +
                                 kTinyOverrides + " --optimizer.iterations=3";
  REQUIRE(run_cli(train_args) == 0);
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(loss));
  {
    std::ifstream in(loss);
    std::string header;
    std::getline(in, header);
    CHECK(header == "iteration,loss");
  }

  int code = -1;
  const std::string eval_out = run_cli_capture(
      "eval --checkpoint " + ckpt + kTinyOverrides + " --optimizer.iterations=3", &code);
  CHECK(code == 0);
  CHECK(eval_out.find("fold,seed") != std::string::npos);

  // assemble an episode directory from generated data
  const fs::path data = work / "data";
  REQUIRE(run_cli("gen-data --out " + data.string() + kTinyOverrides) == 0);
  const fs::path episode = work / "episode";
  fs::create_directories(episode);
  fs::copy_file(data / "class_2" / "img_000.ppm", episode / "support_0.ppm");
  fs::copy_file(data / "class_2" / "msk_000.pgm", episode / "support_0_mask.pgm");
  fs::copy_file(data / "class_2" / "img_001.ppm", episode / "query.ppm");
  fs::copy_file(data / "class_2" / "msk_001.pgm", episode / "query_mask.pgm");

  const fs::path pred_out = work / "pred";
  REQUIRE(run_cli("predict --checkpoint " + ckpt + " --episode-dir " + episode.string() +
                  " --out " + pred_out.string() + kTinyOverrides +
                  " --optimizer.iterations=3") == 0);
  int files = 0;
  for (const auto& entry : fs::directory_iterator(pred_out)) {
    ++files;
    CHECK((entry.path().extension() == ".ppm" || entry.path().extension() == ".pgm"));
  }
  CHECK(files == 3);
  fs::remove_all(work);
}

TEST_CASE("gradcheck exits 0 on a fresh build") {
  CHECK(run_cli("gradcheck --instances 2") == 0);
}

TEST_CASE("exit codes: usage/config 1, io 2, numeric 3") {
  CHECK(run_cli("bogus-subcommand") == 1);
  CHECK(run_cli("eval --oracle --bogus.key=1") == 1);
  CHECK(run_cli("train --optimizer.lr=-5") == 1);
  CHECK(run_cli("eval --checkpoint /nonexistent/ckpt.mcec" + kTinyOverrides) == 2);
  CHECK(run_cli("train --out /tmp/mce_cli_div.mcec" + kTinyOverrides +
                " --optimizer.iterations=50 --optimizer.lr=1e6") == 3);
}

TEST_CASE("identical seeds give identical eval rows") {
  int code_a = -1, code_b = -1;
  const std::string args = "eval --oracle" + kTinyOverrides;
  const std::string a = run_cli_capture(args, &code_a);
  const std::string b = run_cli_capture(args, &code_b);
  CHECK(code_a == 0);
  CHECK(a == b);
}
