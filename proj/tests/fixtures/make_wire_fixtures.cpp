// Regenerates the golden request bodies: make_wire_fixtures <out_dir>
#include <cstdio>
#include <fstream>

#include "plrefine/wire.hpp"
#include "wire_cases.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <out_dir>\n", argv[0]);
    return 1;
  }
  for (const auto& c : wire_cases::all()) {
    const std::string path = std::string(argv[1]) + "/" + c.name + ".json";
    std::ofstream(path) << plrefine::wire::encode_refine_request(c.image, c.prompt).dump(2) << "\n";
    std::printf("wrote %s\n", path.c_str());
  }
  plrefine::BinaryPlane mask(10, 7);
  mask(4, 3) = 1;
  const std::string path = std::string(argv[1]) + "/response.json";
  std::ofstream(path) << plrefine::wire::encode_refine_response({mask, 0.75}).dump(2) << "\n";
  std::printf("wrote %s\n", path.c_str());
}
