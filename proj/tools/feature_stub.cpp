// Reference external feature provider for tests. Features are the per-channel
// means of the decoded image in [-1, 1].
//
//   tvdb-feature-stub            read base64 PNG lines on stdin, answer JSON arrays
//   tvdb-feature-stub --http P   serve POST /features on 127.0.0.1:P

#include "tvdb/io.hpp"

#include <httplib.h>
#include <json.hpp>

#include <iostream>
#include <string>

namespace {

std::string features_of(const std::string& b64) {
  const tvdb::ImageTensor img = tvdb::decode_png(tvdb::base64_decode(b64));
  nlohmann::json out = nlohmann::json::array();
  for (int c = 0; c < img.channels(); ++c) out.push_back(img.values().row(c).mean());
  return out.dump();
}

}  // namespace

int main(int argc, char** argv) {
  if (argc == 3 && std::string(argv[1]) == "--http") {
    httplib::Server server;
    server.Post("/features", [](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto body = nlohmann::json::parse(req.body);
        res.set_content(nlohmann::json{{"features", nlohmann::json::parse(features_of(body.at("image")))}}.dump(),
                        "application/json");
      } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(e.what(), "text/plain");
      }
    });
    return server.listen("127.0.0.1", std::stoi(argv[2])) ? 0 : 1;
  }
  std::string line;
  while (std::getline(std::cin, line)) {
    try {
      std::cout << features_of(line) << std::endl;
    } catch (const std::exception& e) {
      std::cerr << "feature stub: " << e.what() << "\n";
      return 1;
    }
  }
  return 0;
}
