#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "hlpd/cli.hpp"
#include "hlpd/http_transport.hpp"

int main(int argc, char** argv) {
  hlpd::cli::Env env;
  env.transport = hlpd::httplib_post;
  env.default_data_dir = HLPD_DATA_DIR;
  return hlpd::cli::run(std::vector<std::string>(argv + 1, argv + argc), env);
}
